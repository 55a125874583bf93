//! S2-compatible cell identifiers.
//!
//! A cell id is a 64-bit integer laid out as
//!
//! ```text
//! [face: 3 bits][level k: 2k bits of Hilbert position][1][0 padding]
//! ```
//!
//! The cube-face projection is the quadratic one used by the reference S2
//! library, so ids and tokens produced here agree bit-for-bit with it.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use super::DggError;

pub const MAX_LEVEL: u8 = 30;
const POS_BITS: u32 = 2 * MAX_LEVEL as u32 + 1;
const NUM_FACES: u8 = 6;
const MAX_SIZE: u32 = 1 << MAX_LEVEL;

const LOOKUP_BITS: u32 = 4;
const SWAP_MASK: usize = 0x01;
const INVERT_MASK: usize = 0x02;

const POS_TO_IJ: [[usize; 4]; 4] = [[0, 1, 3, 2], [0, 2, 3, 1], [3, 2, 0, 1], [3, 1, 0, 2]];
const POS_TO_ORIENTATION: [usize; 4] = [SWAP_MASK, 0, 0, INVERT_MASK | SWAP_MASK];

struct Lookup {
    pos: Vec<u16>,
    ij: Vec<u16>,
}

fn lookup() -> &'static Lookup {
    static TABLES: OnceLock<Lookup> = OnceLock::new();
    TABLES.get_or_init(|| {
        let size = 1 << (2 * LOOKUP_BITS + 2);
        let mut t = Lookup { pos: vec![0; size], ij: vec![0; size] };
        for orientation in 0..4 {
            init_lookup_cell(&mut t, 0, 0, 0, orientation, 0, orientation);
        }
        t
    })
}

fn init_lookup_cell(
    t: &mut Lookup,
    level: u32,
    i: usize,
    j: usize,
    orig_orientation: usize,
    pos: usize,
    orientation: usize,
) {
    if level == LOOKUP_BITS {
        let ij = (i << LOOKUP_BITS) + j;
        t.pos[(ij << 2) + orig_orientation] = ((pos << 2) + orientation) as u16;
        t.ij[(pos << 2) + orig_orientation] = ((ij << 2) + orientation) as u16;
        return;
    }
    let r = POS_TO_IJ[orientation];
    for (index, &sub) in r.iter().enumerate() {
        init_lookup_cell(
            t,
            level + 1,
            (i << 1) + (sub >> 1),
            (j << 1) + (sub & 1),
            orig_orientation,
            (pos << 2) + index,
            orientation ^ POS_TO_ORIENTATION[index],
        );
    }
}

/// Geographic coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatLng {
    lat: f64,
    lng: f64,
}

impl LatLng {
    /// Validates bounds; a longitude of exactly -180 is folded onto 180.
    pub fn new(lat: f64, lng: f64) -> Result<Self, DggError> {
        if !lat.is_finite() || !lng.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lng) {
            return Err(DggError::InvalidLatLng { lat, lng });
        }
        let lng = if lng == -180.0 { 180.0 } else { lng };
        Ok(Self { lat, lng })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }

    fn to_point(self) -> [f64; 3] {
        let phi = self.lat.to_radians();
        let theta = self.lng.to_radians();
        let cos_phi = phi.cos();
        [theta.cos() * cos_phi, theta.sin() * cos_phi, phi.sin()]
    }

    fn from_point(p: [f64; 3]) -> Self {
        let lat = p[2].atan2((p[0] * p[0] + p[1] * p[1]).sqrt());
        let lng = p[1].atan2(p[0]);
        Self { lat: lat.to_degrees(), lng: lng.to_degrees() }
    }

    /// Great-circle distance in kilometres on a sphere of the given radius.
    pub fn haversine_km(&self, other: &LatLng, radius_km: f64) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lng - self.lng).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * radius_km * a.sqrt().min(1.0).asin()
    }
}

impl fmt::Display for LatLng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9},{:.9}", self.lat, self.lng)
    }
}

fn largest_abs_component(p: [f64; 3]) -> usize {
    let a = [p[0].abs(), p[1].abs(), p[2].abs()];
    if a[0] > a[1] {
        if a[0] > a[2] {
            0
        } else {
            2
        }
    } else if a[1] > a[2] {
        1
    } else {
        2
    }
}

fn xyz_to_face_uv(p: [f64; 3]) -> (u8, f64, f64) {
    let mut face = largest_abs_component(p);
    if p[face] < 0.0 {
        face += 3;
    }
    let (x, y, z) = (p[0], p[1], p[2]);
    let (u, v) = match face {
        0 => (y / x, z / x),
        1 => (-x / y, z / y),
        2 => (-x / z, -y / z),
        3 => (z / x, y / x),
        4 => (z / y, -x / y),
        _ => (-y / z, -x / z),
    };
    (face as u8, u, v)
}

fn face_uv_to_xyz(face: u8, u: f64, v: f64) -> [f64; 3] {
    match face {
        0 => [1.0, u, v],
        1 => [-u, 1.0, v],
        2 => [-u, -v, 1.0],
        3 => [-1.0, -v, -u],
        4 => [v, -1.0, -u],
        _ => [v, u, -1.0],
    }
}

fn uv_to_st(u: f64) -> f64 {
    if u >= 0.0 {
        0.5 * (1.0 + 3.0 * u).sqrt()
    } else {
        1.0 - 0.5 * (1.0 - 3.0 * u).sqrt()
    }
}

fn st_to_uv(s: f64) -> f64 {
    if s >= 0.5 {
        (1.0 / 3.0) * (4.0 * s * s - 1.0)
    } else {
        (1.0 / 3.0) * (1.0 - 4.0 * (1.0 - s) * (1.0 - s))
    }
}

fn st_to_ij(s: f64) -> u32 {
    let v = (MAX_SIZE as f64 * s).floor();
    v.clamp(0.0, (MAX_SIZE - 1) as f64) as u32
}

/// A cell of the hierarchical grid, levels 0 (cube face) through 30 (leaf).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct CellId(u64);

impl CellId {
    /// Wraps raw bits, checking the face range and marker bit.
    pub fn from_raw(bits: u64) -> Result<Self, DggError> {
        let c = CellId(bits);
        if c.is_valid() {
            Ok(c)
        } else {
            Err(DggError::InvalidCellId(bits))
        }
    }

    pub fn id(&self) -> u64 {
        self.0
    }

    pub fn is_valid(&self) -> bool {
        self.face() < NUM_FACES && (self.lsb() & 0x1555_5555_5555_5555) != 0
    }

    pub fn face(&self) -> u8 {
        (self.0 >> POS_BITS) as u8
    }

    fn lsb(&self) -> u64 {
        self.0 & self.0.wrapping_neg()
    }

    fn lsb_for_level(level: u8) -> u64 {
        1u64 << (2 * (MAX_LEVEL - level) as u32)
    }

    pub fn level(&self) -> u8 {
        MAX_LEVEL - (self.0.trailing_zeros() / 2) as u8
    }

    pub fn is_leaf(&self) -> bool {
        self.0 & 1 == 1
    }

    pub fn from_face(face: u8) -> Result<Self, DggError> {
        if face >= NUM_FACES {
            return Err(DggError::InvalidCellId((face as u64) << POS_BITS));
        }
        Ok(CellId(((face as u64) << POS_BITS) + Self::lsb_for_level(0)))
    }

    /// Level-`level` cell containing `point`.
    pub fn from_latlng(point: LatLng, level: u8) -> Result<Self, DggError> {
        if level > MAX_LEVEL {
            return Err(DggError::InvalidLevel(level));
        }
        let (face, u, v) = xyz_to_face_uv(point.to_point());
        let i = st_to_ij(uv_to_st(u));
        let j = st_to_ij(uv_to_st(v));
        Ok(Self::from_face_ij(face, i, j).parent_unchecked(level))
    }

    fn from_face_ij(face: u8, i: u32, j: u32) -> Self {
        let table = lookup();
        let mut n: u64 = (face as u64) << (POS_BITS - 1);
        let mut bits = face as usize & SWAP_MASK;
        let mask = (1usize << LOOKUP_BITS) - 1;
        for k in (0..8).rev() {
            bits += ((i as usize >> (k * LOOKUP_BITS)) & mask) << (LOOKUP_BITS + 2);
            bits += ((j as usize >> (k * LOOKUP_BITS)) & mask) << 2;
            bits = table.pos[bits] as usize;
            n |= ((bits >> 2) as u64) << (k * 2 * LOOKUP_BITS);
            bits &= SWAP_MASK | INVERT_MASK;
        }
        CellId(n * 2 + 1)
    }

    fn to_face_ij_orientation(self) -> (u8, u32, u32, usize) {
        let table = lookup();
        let face = self.face();
        let mut bits = face as usize & SWAP_MASK;
        let (mut i, mut j) = (0u32, 0u32);
        let nmask = (1usize << LOOKUP_BITS) - 1;
        for k in (0..8u32).rev() {
            let nbits = if k == 7 { MAX_LEVEL as u32 - 7 * LOOKUP_BITS } else { LOOKUP_BITS };
            bits += (((self.0 >> (k * 2 * LOOKUP_BITS + 1)) as usize) & ((1 << (2 * nbits)) - 1)) << 2;
            bits = table.ij[bits] as usize;
            i += ((bits >> (LOOKUP_BITS + 2)) as u32) << (k * LOOKUP_BITS);
            j += (((bits >> 2) & nmask) as u32) << (k * LOOKUP_BITS);
            bits &= SWAP_MASK | INVERT_MASK;
        }
        if self.lsb() & 0x1111_1111_1111_1110 != 0 {
            bits ^= SWAP_MASK;
        }
        (face, i, j, bits)
    }

    fn parent_unchecked(self, level: u8) -> Self {
        let lsb = Self::lsb_for_level(level);
        CellId((self.0 & lsb.wrapping_neg()) | lsb)
    }

    /// Ancestor at `level`; `level` may equal the cell's own level.
    pub fn parent(&self, level: u8) -> Result<Self, DggError> {
        if level > self.level() {
            return Err(DggError::ParentLevel { level, cell_level: self.level() });
        }
        Ok(self.parent_unchecked(level))
    }

    pub fn range_min(&self) -> u64 {
        self.0 - (self.lsb() - 1)
    }

    pub fn range_max(&self) -> u64 {
        self.0 + (self.lsb() - 1)
    }

    pub fn contains(&self, other: &CellId) -> bool {
        other.0 >= self.range_min() && other.0 <= self.range_max()
    }

    /// The four children in Hilbert order; `None` for leaves.
    pub fn children(&self) -> Option<[CellId; 4]> {
        if self.is_leaf() {
            return None;
        }
        let step = self.lsb() >> 2;
        let first = self.0 - self.lsb() + step;
        Some([0, 1, 2, 3].map(|k| CellId(first + 2 * step * k)))
    }

    /// Centre of the cell, computed the same way as the reference library.
    pub fn center(&self) -> LatLng {
        let (face, i, j, _) = self.to_face_ij_orientation();
        let delta = if self.is_leaf() {
            1
        } else if ((i as u64 ^ (self.0 >> 2)) & 1) != 0 {
            2
        } else {
            0
        };
        let si = 2 * i as u64 + delta;
        let ti = 2 * j as u64 + delta;
        let scale = 0.5 / MAX_SIZE as f64;
        let p = face_uv_to_xyz(face, st_to_uv(scale * si as f64), st_to_uv(scale * ti as f64));
        LatLng::from_point(p)
    }

    /// Hex of the id with trailing zeros stripped.
    pub fn to_token(&self) -> CellToken {
        let hex = format!("{:016x}", self.0);
        CellToken(hex.trim_end_matches('0').to_string())
    }

    pub fn from_token(token: &str) -> Result<Self, DggError> {
        if token.is_empty() || token.len() > 16 {
            return Err(DggError::ParseToken(token.to_string()));
        }
        if !token.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(DggError::ParseToken(token.to_string()));
        }
        let padded = format!("{token:0<16}");
        let bits = u64::from_str_radix(&padded, 16).map_err(|_| DggError::ParseToken(token.to_string()))?;
        let cell = CellId(bits);
        if !cell.is_valid() || cell.to_token().as_str() != token {
            return Err(DggError::ParseToken(token.to_string()));
        }
        Ok(cell)
    }
}

impl fmt::Debug for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CellId({}, level {})", self.to_token(), self.level())
    }
}

/// Lowercase hex token of a cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellToken(String);

impl CellToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn to_cell(&self) -> Result<CellId, DggError> {
        CellId::from_token(&self.0)
    }
}

impl FromStr for CellToken {
    type Err = DggError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellId::from_token(s).map(|c| c.to_token())
    }
}

impl fmt::Display for CellToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for CellToken {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_cells_have_level_zero() {
        for face in 0..6 {
            let c = CellId::from_face(face).unwrap();
            assert_eq!(c.level(), 0);
            assert_eq!(c.face(), face);
        }
        assert!(CellId::from_face(6).is_err());
    }

    #[test]
    fn origin_maps_to_face_zero() {
        let p = LatLng::new(0.0, 0.0).unwrap();
        let c = CellId::from_latlng(p, 0).unwrap();
        assert_eq!(c, CellId::from_face(0).unwrap());
        assert_eq!(CellId::from_latlng(c.center(), 0).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LatLng::new(91.0, 0.0).is_err());
        assert!(LatLng::new(0.0, 180.5).is_err());
        assert!(LatLng::new(f64::NAN, 0.0).is_err());
        assert!(LatLng::new(0.0, f64::INFINITY).is_err());
        assert_eq!(LatLng::new(0.0, -180.0).unwrap().lng(), 180.0);
        let p = LatLng::new(10.0, 10.0).unwrap();
        assert!(matches!(CellId::from_latlng(p, 31), Err(DggError::InvalidLevel(31))));
    }

    #[test]
    fn token_parsing_errors() {
        assert!(CellId::from_token("").is_err());
        assert!(CellId::from_token("35g").is_err());
        assert!(CellId::from_token("35F057").is_err());
        // face 7 does not exist
        assert!(CellId::from_token("f").is_err());
        // trailing zero is never part of a canonical token
        assert!(CellId::from_token("350").is_err());
        assert!(CellId::from_token("0").is_err());
    }

    #[test]
    fn known_tokens_and_parent() {
        let l10 = CellId::from_token("35f057").unwrap();
        assert_eq!(l10.level(), 10);
        assert_eq!(l10.parent(9).unwrap().to_token(), "35f054");
        assert_eq!(l10.parent(10).unwrap(), l10);
        assert!(l10.parent(11).is_err());
    }

    #[test]
    fn children_centers_lie_in_parent() {
        let parent = CellId::from_token("35f057").unwrap();
        let kids = parent.children().unwrap();
        for k in kids {
            assert_eq!(k.parent(10).unwrap(), parent);
            assert_eq!(CellId::from_latlng(k.center(), 10).unwrap(), parent);
            assert_eq!(CellId::from_latlng(k.center(), 11).unwrap(), k);
        }
        let leaf = CellId::from_latlng(parent.center(), 30).unwrap();
        assert!(leaf.children().is_none());
    }

    #[test]
    fn haversine_one_degree_meridian() {
        let a = LatLng::new(30.0, 120.0).unwrap();
        let b = LatLng::new(31.0, 120.0).unwrap();
        let d = a.haversine_km(&b, 6371.0088);
        assert!((d - 111.19).abs() < 0.01, "{d}");
    }
}
