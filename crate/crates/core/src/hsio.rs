//! Readers and writers for cubes, map polygons, control points, label maps,
//! proportion maps and endmember tables.
//!
//! Cubes use ENVI-style plain-text headers (`key = value`, with `{ ... }`
//! values allowed to span lines) next to a flat binary file. Label maps are
//! raw little-endian `u32` in row-major order. Proportion maps are planar
//! `f32` with an ENVI header, so they can be loaded back with [`read_cube`].

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::spmlda::{Endmember, ProportionMap};

/// On-disk band ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            "bip" => Ok(Interleave::Bip),
            other => Err(Error::Header(format!("unknown interleave '{other}'"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }

    /// Position in the file of value (row, col, band).
    #[inline]
    fn file_index(self, row: usize, col: usize, band: usize, h: usize, w: usize, b: usize) -> usize {
        match self {
            Interleave::Bsq => band * h * w + row * w + col,
            Interleave::Bil => row * b * w + band * w + col,
            Interleave::Bip => (row * w + col) * b + band,
        }
    }
}

/// ENVI numeric element types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
    U32,
    I64,
    U64,
}

impl DataType {
    fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => DataType::U8,
            2 => DataType::I16,
            3 => DataType::I32,
            4 => DataType::F32,
            5 => DataType::F64,
            12 => DataType::U16,
            13 => DataType::U32,
            14 => DataType::I64,
            15 => DataType::U64,
            other => return Err(Error::Header(format!("unsupported data type {other}"))),
        })
    }

    pub fn code(self) -> u32 {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 => 3,
            DataType::F32 => 4,
            DataType::F64 => 5,
            DataType::U16 => 12,
            DataType::U32 => 13,
            DataType::I64 => 14,
            DataType::U64 => 15,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::F64 | DataType::I64 | DataType::U64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], big_endian: bool) -> f64 {
        macro_rules! read {
            ($t:ty, $n:expr) => {{
                let mut buf = [0u8; $n];
                buf.copy_from_slice(bytes);
                if big_endian {
                    <$t>::from_be_bytes(buf) as f64
                } else {
                    <$t>::from_le_bytes(buf) as f64
                }
            }};
        }
        match self {
            DataType::U8 => bytes[0] as f64,
            DataType::I16 => read!(i16, 2),
            DataType::I32 => read!(i32, 4),
            DataType::F32 => read!(f32, 4),
            DataType::F64 => read!(f64, 8),
            DataType::U16 => read!(u16, 2),
            DataType::U32 => read!(u32, 4),
            DataType::I64 => read!(i64, 8),
            DataType::U64 => read!(u64, 8),
        }
    }
}

/// Parsed cube header.
#[derive(Debug, Clone, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub header_offset: usize,
    pub big_endian: bool,
    pub wavelengths: Option<Vec<f64>>,
}

fn parse_fields(text: &str) -> Result<BTreeMap<String, String>> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("ENVI") => {}
        _ => return Err(Error::Header("missing ENVI magic on first line".into())),
    }
    let mut fields = BTreeMap::new();
    let mut pending: Option<(String, String)> = None;
    for (lineno, raw) in lines.enumerate() {
        let line = raw.trim();
        if let Some((key, mut acc)) = pending.take() {
            acc.push(' ');
            acc.push_str(line);
            if line.contains('}') {
                fields.insert(key, acc);
            } else {
                pending = Some((key, acc));
            }
            continue;
        }
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Header(format!("line {}: expected 'key = value'", lineno + 2))
        })?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            fields.insert(key, value);
        }
    }
    if let Some((key, _)) = pending {
        return Err(Error::Header(format!("unterminated brace value for '{key}'")));
    }
    Ok(fields)
}

fn required_usize(fields: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    let raw = fields
        .get(key)
        .ok_or_else(|| Error::Header(format!("missing key '{key}'")))?;
    raw.parse()
        .map_err(|_| Error::Header(format!("key '{key}' is not an integer: '{raw}'")))
}

impl EnviHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let fields = parse_fields(text)?;
        let samples = required_usize(&fields, "samples")?;
        let lines = required_usize(&fields, "lines")?;
        let bands = required_usize(&fields, "bands")?;
        let interleave = Interleave::parse(
            fields
                .get("interleave")
                .ok_or_else(|| Error::Header("missing key 'interleave'".into()))?,
        )?;
        let data_type = DataType::from_code(required_usize(&fields, "data type")? as u32)?;
        let header_offset = match fields.get("header offset") {
            Some(_) => required_usize(&fields, "header offset")?,
            None => 0,
        };
        let big_endian = match fields.get("byte order").map(String::as_str) {
            None | Some("0") => false,
            Some("1") => true,
            Some(other) => return Err(Error::Header(format!("bad byte order '{other}'"))),
        };
        let wavelengths = match fields.get("wavelength") {
            Some(raw) => {
                let inner = raw.trim().trim_start_matches('{').trim_end_matches('}');
                let values: std::result::Result<Vec<f64>, _> = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse::<f64>)
                    .collect();
                let values =
                    values.map_err(|_| Error::Header("unparseable wavelength list".into()))?;
                if values.len() != bands {
                    return Err(Error::Header(format!(
                        "{} wavelengths for {bands} bands",
                        values.len()
                    )));
                }
                Some(values)
            }
            None => None,
        };
        if samples == 0 || lines == 0 || bands == 0 {
            return Err(Error::Header("samples, lines and bands must be positive".into()));
        }
        Ok(Self {
            samples,
            lines,
            bands,
            interleave,
            data_type,
            header_offset,
            big_endian,
            wavelengths,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("ENVI\n");
        s.push_str(&format!("samples = {}\n", self.samples));
        s.push_str(&format!("lines = {}\n", self.lines));
        s.push_str(&format!("bands = {}\n", self.bands));
        s.push_str(&format!("header offset = {}\n", self.header_offset));
        s.push_str(&format!("data type = {}\n", self.data_type.code()));
        s.push_str(&format!("interleave = {}\n", self.interleave.as_str()));
        s.push_str(&format!("byte order = {}\n", u8::from(self.big_endian)));
        if let Some(wl) = &self.wavelengths {
            let list: Vec<String> = wl.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&format!("wavelength = {{{}}}\n", list.join(", ")));
        }
        s
    }

    fn payload_bytes(&self) -> u64 {
        (self.samples * self.lines * self.bands * self.data_type.size()) as u64
    }
}

/// Reads a cube from an ENVI header and its binary data file, returning it
/// in canonical (row, col, band) addressing.
pub fn read_cube(header_path: &Path, data_path: &Path) -> Result<HsiCube> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = EnviHeader::parse(&text)?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    decode_cube(&header, &bytes)
}

/// Decodes raw cube bytes according to `header`.
pub fn decode_cube(header: &EnviHeader, bytes: &[u8]) -> Result<HsiCube> {
    let expected = header.header_offset as u64 + header.payload_bytes();
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let (h, w, b) = (header.lines, header.samples, header.bands);
    let size = header.data_type.size();
    let payload = &bytes[header.header_offset..];
    let mut data = vec![0.0; h * w * b];
    for r in 0..h {
        for c in 0..w {
            for band in 0..b {
                let fi = header.interleave.file_index(r, c, band, h, w, b) * size;
                let v = header
                    .data_type
                    .decode(&payload[fi..fi + size], header.big_endian);
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: r, col: c, band });
                }
                data[(r * w + c) * b + band] = v;
            }
        }
    }
    let cube = HsiCube::new(h, w, b, data)?;
    match &header.wavelengths {
        Some(wl) => cube.with_wavelengths(wl.clone()),
        None => Ok(cube),
    }
}

/// Writes `cube` as little-endian `f64` in the requested interleave.
pub fn write_cube(
    cube: &HsiCube,
    interleave: Interleave,
    header_path: &Path,
    data_path: &Path,
) -> Result<()> {
    let header = EnviHeader {
        samples: cube.width(),
        lines: cube.height(),
        bands: cube.bands(),
        interleave,
        data_type: DataType::F64,
        header_offset: 0,
        big_endian: false,
        wavelengths: cube.wavelengths().map(<[f64]>::to_vec),
    };
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    let mut values = vec![0.0f64; h * w * b];
    for r in 0..h {
        for c in 0..w {
            for band in 0..b {
                values[interleave.file_index(r, c, band, h, w, b)] = cube.get(r, c, band);
            }
        }
    }
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(header_path, header.to_text().as_bytes())?;
    write_file(data_path, &bytes)
}

/// Locates the binary file that accompanies an ENVI header: the header path
/// without its `.hdr` extension, or that stem with a common raster suffix.
pub fn locate_cube_data(header_path: &Path) -> Option<PathBuf> {
    let stem = header_path.with_extension("");
    let mut candidates = vec![stem.clone()];
    for ext in ["img", "dat", "raw", "bin", "bsq", "bil", "bip", "f32"] {
        candidates.push(stem.with_extension(ext));
    }
    candidates
        .into_iter()
        .find(|p| p != header_path && p.is_file())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// One map polygon. Rings are stored open (no repeated closing vertex) and
/// are filled together under the even-odd rule, so inner rings act as holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolygon {
    pub id: u32,
    pub class: String,
    pub rings: Vec<Vec<[f64; 2]>>,
}

/// Map polygons with class tags, in map coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolygonSet {
    polygons: Vec<MapPolygon>,
}

impl PolygonSet {
    pub fn new(polygons: Vec<MapPolygon>) -> Result<Self> {
        let mut ids = HashSet::new();
        for (i, p) in polygons.iter().enumerate() {
            if !ids.insert(p.id) {
                return Err(Error::Polygon {
                    feature: i,
                    message: format!("duplicate polygon id {}", p.id),
                });
            }
            if p.rings.is_empty() {
                return Err(Error::Polygon {
                    feature: i,
                    message: "polygon has no rings".into(),
                });
            }
            for ring in &p.rings {
                if ring.len() < 3 {
                    return Err(Error::Polygon {
                        feature: i,
                        message: format!("ring has {} vertices, need at least 3", ring.len()),
                    });
                }
            }
        }
        Ok(Self { polygons })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MapPolygon> {
        self.polygons.iter()
    }

    pub fn get(&self, id: u32) -> Option<&MapPolygon> {
        self.polygons.iter().find(|p| p.id == id)
    }
}

fn parse_ring(feature: usize, value: &Value) -> Result<Vec<[f64; 2]>> {
    let err = |message: &str| Error::Polygon {
        feature,
        message: message.into(),
    };
    let coords = value.as_array().ok_or_else(|| err("ring is not an array"))?;
    let mut ring = Vec::with_capacity(coords.len());
    for pt in coords {
        let xy = pt.as_array().ok_or_else(|| err("position is not an array"))?;
        if xy.len() < 2 {
            return Err(err("position needs two coordinates"));
        }
        let x = xy[0].as_f64().ok_or_else(|| err("non-numeric coordinate"))?;
        let y = xy[1].as_f64().ok_or_else(|| err("non-numeric coordinate"))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(err("non-finite coordinate"));
        }
        ring.push([x, y]);
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(err(&format!(
            "ring has {} distinct vertices, need at least 3",
            ring.len()
        )));
    }
    Ok(ring)
}

/// Parses a GeoJSON FeatureCollection of `Polygon` / `MultiPolygon`
/// features. The class tag is read from `properties.class`; the polygon id
/// from the feature's integer `id` member, falling back to its index.
pub fn parse_polygons(text: &str) -> Result<PolygonSet> {
    let root: Value = serde_json::from_str(text)?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Polygon {
            feature: 0,
            message: "top-level object is not a FeatureCollection".into(),
        });
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Polygon {
            feature: 0,
            message: "missing 'features' array".into(),
        })?;

    let mut polygons = Vec::with_capacity(features.len());
    for (i, feat) in features.iter().enumerate() {
        let err = |message: String| Error::Polygon { feature: i, message };
        let class = feat
            .get("properties")
            .and_then(|p| p.get("class"))
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing 'class' tag in properties".into()))?
            .to_string();
        let geometry = feat
            .get("geometry")
            .ok_or_else(|| err("missing geometry".into()))?;
        let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("");
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| err("missing coordinates".into()))?;
        let rings = match gtype {
            "Polygon" => coords
                .iter()
                .map(|r| parse_ring(i, r))
                .collect::<Result<Vec<_>>>()?,
            "MultiPolygon" => {
                let mut rings = Vec::new();
                for part in coords {
                    let part = part
                        .as_array()
                        .ok_or_else(|| err("MultiPolygon part is not an array".into()))?;
                    for r in part {
                        rings.push(parse_ring(i, r)?);
                    }
                }
                rings
            }
            other => {
                return Err(err(format!(
                    "unsupported geometry type '{other}', only polygon features are accepted"
                )))
            }
        };
        if rings.is_empty() {
            return Err(err("polygon has no rings".into()));
        }
        let id = match feat.get("id").and_then(Value::as_u64) {
            Some(v) => u32::try_from(v).map_err(|_| err(format!("id {v} out of range")))?,
            None => i as u32,
        };
        polygons.push(MapPolygon { id, class, rings });
    }
    PolygonSet::new(polygons)
}

pub fn read_polygons(path: &Path) -> Result<PolygonSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_polygons(&text)
}

/// One map-to-image correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub map_x: f64,
    pub map_y: f64,
    pub pixel_col: f64,
    pub pixel_row: f64,
}

/// Manually selected correspondences between map and image coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlPoints {
    pub pairs: Vec<ControlPoint>,
}

impl ControlPoints {
    pub fn new(pairs: Vec<ControlPoint>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Reads a CSV with header `map_x,map_y,pixel_col,pixel_row`.
pub fn read_control_points(path: &Path) -> Result<ControlPoints> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<ControlPoint>().enumerate() {
        let p = row?;
        if ![p.map_x, p.map_y, p.pixel_col, p.pixel_row]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::ControlPoints(format!("row {i}: non-finite value")));
        }
        pairs.push(p);
    }
    Ok(ControlPoints::new(pairs))
}

pub fn write_control_points(points: &ControlPoints, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for p in &points.pairs {
        writer.serialize(p)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Raw label bytes: little-endian `u32`, row-major.
pub fn label_map_bytes(labels: &LabelMap) -> Vec<u8> {
    labels
        .as_slice()
        .iter()
        .flat_map(|l| l.to_le_bytes())
        .collect()
}

/// Deterministic color table: one color per label drawn from a stream
/// seeded by `seed`.
pub fn label_palette(num_labels: usize, seed: u64) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_labels)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect()
}

pub fn render_label_map(labels: &LabelMap, seed: u64) -> RgbImage {
    let n = labels.as_slice().iter().max().map_or(0, |&m| m as usize + 1);
    let palette = label_palette(n, seed);
    RgbImage::from_fn(labels.width() as u32, labels.height() as u32, |x, y| {
        Rgb(palette[labels.get(y as usize, x as usize) as usize])
    })
}

/// Writes the raw label file and a PNG rendering colored by `seed`.
pub fn write_label_map(
    labels: &LabelMap,
    raw_path: &Path,
    render_path: &Path,
    seed: u64,
) -> Result<()> {
    write_file(raw_path, &label_map_bytes(labels))?;
    render_label_map(labels, seed)
        .save_with_format(render_path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(render_path, io),
            other => Error::Image(other),
        })
}

pub fn read_label_map(path: &Path, height: usize, width: usize) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (height * width * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LabelMap::new(height, width, labels)
}

/// Writes proportions as planar little-endian `f32` plus an ENVI header
/// with one band per endmember.
pub fn write_proportions(props: &ProportionMap, header_path: &Path, data_path: &Path) -> Result<()> {
    let header = EnviHeader {
        samples: props.width(),
        lines: props.height(),
        bands: props.num_endmembers(),
        interleave: Interleave::Bsq,
        data_type: DataType::F32,
        header_offset: 0,
        big_endian: false,
        wavelengths: None,
    };
    let n = props.height() * props.width();
    let m = props.num_endmembers();
    let mut bytes = Vec::with_capacity(n * m * 4);
    for k in 0..m {
        for i in 0..n {
            bytes.extend_from_slice(&(props.row(i)[k] as f32).to_le_bytes());
        }
    }
    write_file(header_path, header.to_text().as_bytes())?;
    write_file(data_path, &bytes)
}

/// Reads a proportion map written by [`write_proportions`], renormalising
/// each vector to absorb `f32` rounding.
pub fn read_proportions(header_path: &Path, data_path: &Path) -> Result<ProportionMap> {
    let cube = read_cube(header_path, data_path)?;
    let m = cube.bands();
    let mut values = Vec::with_capacity(cube.data().len());
    for px in cube.data().chunks_exact(m) {
        let sum: f64 = px.iter().sum();
        if px.iter().any(|&v| v < 0.0) || sum <= 0.0 {
            return Err(Error::InvalidParam(
                "proportion file holds a vector outside the simplex".into(),
            ));
        }
        values.extend(px.iter().map(|v| v / sum));
    }
    ProportionMap::new(cube.height(), cube.width(), m, values)
}

/// One row per endmember: `tag, mu_0..mu_{B-1}, sigma2_0..sigma2_{B-1}`.
pub fn write_endmembers(endmembers: &[Endmember], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let bands = endmembers.first().map_or(0, |e| e.mu.len());
    let mut header = vec!["tag".to_string()];
    header.extend((0..bands).map(|b| format!("mu_{b}")));
    header.extend((0..bands).map(|b| format!("sigma2_{b}")));
    writer.write_record(&header)?;
    for e in endmembers {
        let mut row = vec![e.tag.clone().unwrap_or_default()];
        row.extend(e.mu.iter().map(|v| format!("{v:?}")));
        row.extend(e.sigma2.iter().map(|v| format!("{v:?}")));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
