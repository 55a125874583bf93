//! Discrete global grid: S2-compatible cells, hex tokens, and the 33-character
//! multi-level geocode used as the geocoding target.

mod cell;
mod codec;

pub use cell::{CellId, CellToken, LatLng, MAX_LEVEL};
pub use codec::{char_class, decode_consistent_prefix, decode_groups, pretty_groups, MultiLevelCode, ALPHABET, CODE_GROUPS, CODE_LEN, CODE_LEVEL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DggError {
    #[error("invalid coordinate lat={lat} lng={lng}")]
    InvalidLatLng { lat: f64, lng: f64 },
    #[error("level {0} outside 0..=30")]
    InvalidLevel(u8),
    #[error("invalid cell id bits {0:#018x}")]
    InvalidCellId(u64),
    #[error("cannot parse cell token {0:?}")]
    ParseToken(String),
    #[error("parent level {level} is finer than cell level {cell_level}")]
    ParentLevel { level: u8, cell_level: u8 },
    #[error("expected a level-{expected} cell, got level {got}")]
    WrongLevel { expected: u8, got: u8 },
    #[error("malformed multi-level code {0:?}")]
    CodeFormat(String),
    #[error("code decodes to an impossible token {token:?} at level {level}")]
    Consistency { level: u8, token: String },
}

pub fn latlng_to_cell(point: LatLng, level: u8) -> Result<CellId, DggError> {
    CellId::from_latlng(point, level)
}

pub fn cell_token(cell: CellId) -> CellToken {
    cell.to_token()
}

pub fn token_to_cell(token: &str) -> Result<CellId, DggError> {
    CellId::from_token(token)
}

pub fn parent(cell: CellId, level: u8) -> Result<CellId, DggError> {
    cell.parent(level)
}

pub fn cell_center(cell: CellId) -> LatLng {
    cell.center()
}

pub fn encode_2lt3c(cell: CellId) -> Result<MultiLevelCode, DggError> {
    MultiLevelCode::encode(cell)
}

pub fn decode_2lt3c(code: &MultiLevelCode) -> Result<Vec<CellToken>, DggError> {
    code.decode()
}

/// Geocode of a point: the code of its level-22 cell.
pub fn geocode_point(point: LatLng) -> MultiLevelCode {
    let cell = CellId::from_latlng(point, CODE_LEVEL).expect("level 22 is valid");
    MultiLevelCode::encode(cell).expect("level 22 cell")
}
