/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_rendered_free: (a: number, b: number) => void;
export const edge_tuning_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const render_stimulus: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const render_trajectory: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const rendered_info: (a: number) => [number, number];
export const rendered_rgba: (a: number) => [number, number];
export const rendered_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
