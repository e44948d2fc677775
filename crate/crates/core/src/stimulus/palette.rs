use serde::{Deserialize, Serialize};

/// The eleven named stimulus colors.
///
/// | name   | RGB             |
/// |--------|-----------------|
/// | red    | 255, 0, 0       |
/// | blue   | 0, 0, 255       |
/// | green  | 0, 128, 0       |
/// | yellow | 255, 255, 0     |
/// | purple | 128, 0, 128     |
/// | orange | 255, 165, 0     |
/// | brown  | 139, 69, 19     |
/// | pink   | 255, 192, 203   |
/// | gray   | 128, 128, 128   |
/// | black  | 0, 0, 0         |
/// | white  | 255, 255, 255   |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
    Purple,
    Orange,
    Brown,
    Pink,
    Gray,
    Black,
    White,
}

impl Color {
    pub const ALL: [Color; 11] = [
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
        Color::Brown,
        Color::Pink,
        Color::Gray,
        Color::Black,
        Color::White,
    ];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Blue => [0, 0, 255],
            Color::Green => [0, 128, 0],
            Color::Yellow => [255, 255, 0],
            Color::Purple => [128, 0, 128],
            Color::Orange => [255, 165, 0],
            Color::Brown => [139, 69, 19],
            Color::Pink => [255, 192, 203],
            Color::Gray => [128, 128, 128],
            Color::Black => [0, 0, 0],
            Color::White => [255, 255, 255],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::Brown => "brown",
            Color::Pink => "pink",
            Color::Gray => "gray",
            Color::Black => "black",
            Color::White => "white",
        }
    }

    pub fn from_name(name: &str) -> Option<Color> {
        Color::ALL.into_iter().find(|c| c.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn table_is_injective_and_named() {
        let rgbs: HashSet<_> = Color::ALL.iter().map(|c| c.rgb()).collect();
        assert_eq!(rgbs.len(), 11);
        for c in Color::ALL {
            assert_eq!(Color::from_name(c.name()), Some(c));
        }
    }
}
