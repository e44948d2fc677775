/* tslint:disable */
/* eslint-disable */

/**
 * An RGBA raster plus a JSON description.
 */
export class Rendered {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly info: string;
    readonly rgba: Uint8Array;
    readonly width: number;
}

/**
 * `S(t)` of the engineered aligned-edge head over `n_stimuli` bar images,
 * for `t` in `-t_max..=t_max` with the given step. Returns JSON.
 */
export function edge_tuning_curve(seed: number, n_stimuli: number, t_max: number, step: number): string;

/**
 * Generates a stimulus of `kind` and applies `scramble` (`none`,
 * `orientation` or `location`) on a `patch`-pixel grid.
 */
export function render_stimulus(kind: string, seed: number, scramble: string, patch: number): Rendered;

/**
 * One continuity frame: the `target`-th perimeter patch (modulo the count)
 * refilled from the window displaced by `t` pixels along x, or its rotated
 * control when `rotated` is set.
 */
export function render_trajectory(kind: string, seed: number, patch: number, target: number, t: number, rotated: boolean): Rendered;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_rendered_free: (a: number, b: number) => void;
    readonly edge_tuning_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly render_stimulus: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly render_trajectory: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly rendered_info: (a: number) => [number, number];
    readonly rendered_rgba: (a: number) => [number, number];
    readonly rendered_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
