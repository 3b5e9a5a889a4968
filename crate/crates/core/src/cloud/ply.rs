//! PLY 1.0 reader/writer for scan exchange.
//!
//! Supported dialect: ASCII and binary little-endian, a single `vertex`
//! element with `float`/`double` properties `x`, `y`, `z`, an optional
//! `float`/`double` `intensity` and an optional `uchar` `label`. Unknown
//! scalar vertex properties are skipped; list properties and non-empty
//! non-vertex elements are rejected. Parse errors name the offending line
//! (ASCII) or byte offset (binary).
//!
//! Positions are stored as `float` (f32) on disk regardless of the in-memory
//! scalar; scan metadata is not persisted.

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::{PointCloud, ScanMeta};
use crate::error::{Error, Result};
use crate::real::Real;

/// On-disk encoding of a PLY file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl ScalarType {
    fn parse(token: &str) -> Option<Self> {
        match token {
            "float" | "float32" => Some(ScalarType::F32),
            "double" | "float64" => Some(ScalarType::F64),
            "char" | "int8" => Some(ScalarType::I8),
            "uchar" | "uint8" => Some(ScalarType::U8),
            "short" | "int16" => Some(ScalarType::I16),
            "ushort" | "uint16" => Some(ScalarType::U16),
            "int" | "int32" => Some(ScalarType::I32),
            "uint" | "uint32" => Some(ScalarType::U32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

/// Parsed vertex layout: property order, per-record byte offsets and the
/// slots of the fields we materialize.
struct VertexLayout {
    props: Vec<(String, ScalarType, usize)>, // (name, type, byte offset)
    record_size: usize,
    x: usize,
    y: usize,
    z: usize,
    intensity: Option<usize>,
    label: Option<usize>,
}

struct Header {
    encoding: PlyEncoding,
    n_vertices: usize,
    layout: VertexLayout,
    lines_read: usize,
    body_offset: u64,
}

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::PlyParse {
        location,
        message: message.into(),
    }
}

fn line_err(line: usize, message: impl Into<String>) -> Error {
    parse_err(format!("line {line}"), message)
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header> {
    let mut raw = Vec::new();
    let mut line_no = 0usize;
    let mut offset = 0u64;

    fn next_line<R: BufRead>(
        reader: &mut R,
        raw: &mut Vec<u8>,
        line_no: &mut usize,
        offset: &mut u64,
    ) -> Result<Option<String>> {
        raw.clear();
        let n = reader.read_until(b'\n', raw)?;
        if n == 0 {
            return Ok(None);
        }
        *offset += n as u64;
        *line_no += 1;
        let s = std::str::from_utf8(raw)
            .map_err(|_| line_err(*line_no, "header is not valid UTF-8"))?;
        Ok(Some(s.trim_end_matches(['\n', '\r']).to_string()))
    }

    let magic = next_line(reader, &mut raw, &mut line_no, &mut offset)?
        .ok_or_else(|| line_err(1, "empty file"))?;
    if magic.trim() != "ply" {
        return Err(line_err(1, format!("bad magic {magic:?}, expected \"ply\"")));
    }

    let mut encoding = None;
    let mut elements: Vec<(String, usize)> = Vec::new();
    let mut vertex_props: Vec<(String, ScalarType)> = Vec::new();

    loop {
        let line = next_line(reader, &mut raw, &mut line_no, &mut offset)?
            .ok_or_else(|| line_err(line_no, "unexpected end of header"))?;
        let this_line = line_no;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => continue, // blank header line
            Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                let kind = tok.next().unwrap_or("");
                let version = tok.next().unwrap_or("");
                if version != "1.0" {
                    return Err(line_err(this_line, format!("unsupported version {version:?}")));
                }
                encoding = Some(match kind {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => {
                        return Err(line_err(this_line, format!("unsupported format {other:?}")))
                    }
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| line_err(this_line, "element without a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| line_err(this_line, "malformed element count"))?;
                if name != "vertex" && count > 0 {
                    return Err(line_err(
                        this_line,
                        format!("unsupported element {name:?} with {count} entries"),
                    ));
                }
                elements.push((name.to_string(), count));
            }
            Some("property") => {
                let (current, _) = elements
                    .last()
                    .ok_or_else(|| line_err(this_line, "property before any element"))?;
                let type_tok = tok
                    .next()
                    .ok_or_else(|| line_err(this_line, "property without a type"))?;
                if type_tok == "list" {
                    if current == "vertex" {
                        return Err(line_err(this_line, "list properties are not supported"));
                    }
                    continue; // list on an empty non-vertex element: ignore
                }
                let ty = ScalarType::parse(type_tok).ok_or_else(|| {
                    line_err(this_line, format!("unknown property type {type_tok:?}"))
                })?;
                let name = tok
                    .next()
                    .ok_or_else(|| line_err(this_line, "property without a name"))?;
                if current == "vertex" {
                    vertex_props.push((name.to_string(), ty));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(line_err(this_line, format!("unknown header keyword {other:?}")))
            }
        }
    }

    let encoding =
        encoding.ok_or_else(|| line_err(line_no, "header has no format declaration"))?;
    let n_vertices = elements
        .iter()
        .find(|(name, _)| name == "vertex")
        .map(|&(_, n)| n)
        .ok_or_else(|| line_err(line_no, "header has no vertex element"))?;

    let mut props = Vec::with_capacity(vertex_props.len());
    let mut record_size = 0usize;
    for (name, ty) in vertex_props {
        props.push((name, ty, record_size));
        record_size += ty.size();
    }
    let slot_of = |wanted: &str| props.iter().position(|(n, _, _)| n == wanted);
    let coord = |name: &str| -> Result<usize> {
        let slot = slot_of(name)
            .ok_or_else(|| line_err(line_no, format!("vertex element lacks property {name:?}")))?;
        if !props[slot].1.is_float() {
            return Err(line_err(
                line_no,
                format!("property {name:?} must be float or double"),
            ));
        }
        Ok(slot)
    };
    let x = coord("x")?;
    let y = coord("y")?;
    let z = coord("z")?;
    let intensity = match slot_of("intensity") {
        Some(slot) if props[slot].1.is_float() => Some(slot),
        Some(_) => {
            return Err(line_err(line_no, "property \"intensity\" must be float or double"))
        }
        None => None,
    };
    let label = match slot_of("label") {
        Some(slot) if props[slot].1 == ScalarType::U8 => Some(slot),
        Some(_) => return Err(line_err(line_no, "property \"label\" must be uchar")),
        None => None,
    };

    Ok(Header {
        encoding,
        n_vertices,
        layout: VertexLayout {
            props,
            record_size,
            x,
            y,
            z,
            intensity,
            label,
        },
        lines_read: line_no,
        body_offset: offset,
    })
}

/// Loads a point cloud from a PLY file. `meta.source_id` is set to the file
/// stem; the class schema defaults to the forest schema.
pub fn load_ply<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let file = File::open(path)?;
    let mut reader = BufReader::with_capacity(1 << 16, file);
    let header = read_header(&mut reader)?;

    let mut meta = ScanMeta::<T>::new("");
    meta.source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut cloud = PointCloud {
        positions: Vec::with_capacity(header.n_vertices),
        intensities: header.layout.intensity.map(|_| Vec::with_capacity(header.n_vertices)),
        labels: header.layout.label.map(|_| Vec::with_capacity(header.n_vertices)),
        meta,
    };

    match header.encoding {
        PlyEncoding::Ascii => read_ascii_body(&mut reader, &header, &mut cloud)?,
        PlyEncoding::BinaryLittleEndian => read_binary_body(&mut reader, &header, &mut cloud)?,
    }
    Ok(cloud)
}

fn read_ascii_body<T: Real, R: BufRead>(
    reader: &mut R,
    header: &Header,
    cloud: &mut PointCloud<T>,
) -> Result<()> {
    let layout = &header.layout;
    let mut line_no = header.lines_read;
    let mut line = String::new();
    let mut parsed = 0usize;
    while parsed < header.n_vertices {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(line_err(
                line_no + 1,
                format!("expected {} vertices, got {parsed}", header.n_vertices),
            ));
        }
        line_no += 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != layout.props.len() {
            return Err(line_err(
                line_no,
                format!(
                    "expected {} values per vertex, found {}",
                    layout.props.len(),
                    tokens.len()
                ),
            ));
        }
        let float_at = |slot: usize| -> Result<T> {
            let tok = tokens[slot];
            let v = match layout.props[slot].1 {
                ScalarType::F32 => tok.parse::<f32>().map(|v| v as f64),
                ScalarType::F64 => tok.parse::<f64>(),
                _ => unreachable!("float slots are validated in the header"),
            }
            .map_err(|_| line_err(line_no, format!("malformed float {tok:?}")))?;
            Ok(T::from_f64_lossy(v))
        };
        cloud.positions.push([
            float_at(layout.x)?,
            float_at(layout.y)?,
            float_at(layout.z)?,
        ]);
        if let (Some(col), Some(slot)) = (cloud.intensities.as_mut(), layout.intensity) {
            let v = float_at(slot)?;
            col.push(v);
        }
        if let (Some(col), Some(slot)) = (cloud.labels.as_mut(), layout.label) {
            let tok = tokens[slot];
            let v: u8 = tok
                .parse()
                .map_err(|_| line_err(line_no, format!("malformed label {tok:?}")))?;
            col.push(v);
        }
        parsed += 1;
    }
    Ok(())
}

fn read_binary_body<T: Real, R: Read>(
    reader: &mut R,
    header: &Header,
    cloud: &mut PointCloud<T>,
) -> Result<()> {
    let layout = &header.layout;
    let mut record = vec![0u8; layout.record_size];
    let float_at = |record: &[u8], slot: usize| -> T {
        let (_, ty, off) = layout.props[slot];
        let v = match ty {
            ScalarType::F32 => LittleEndian::read_f32(&record[off..]) as f64,
            ScalarType::F64 => LittleEndian::read_f64(&record[off..]),
            _ => unreachable!("float slots are validated in the header"),
        };
        T::from_f64_lossy(v)
    };
    for i in 0..header.n_vertices {
        reader.read_exact(&mut record).map_err(|_| {
            parse_err(
                format!("byte {}", header.body_offset + (i * layout.record_size) as u64),
                format!("truncated body: expected {} vertices, got {i}", header.n_vertices),
            )
        })?;
        cloud.positions.push([
            float_at(&record, layout.x),
            float_at(&record, layout.y),
            float_at(&record, layout.z),
        ]);
        if let (Some(col), Some(slot)) = (cloud.intensities.as_mut(), layout.intensity) {
            col.push(float_at(&record, slot));
        }
        if let (Some(col), Some(slot)) = (cloud.labels.as_mut(), layout.label) {
            let (_, _, off) = layout.props[slot];
            col.push(record[off]);
        }
    }
    Ok(())
}

fn write_header<W: Write>(
    out: &mut W,
    encoding: PlyEncoding,
    n: usize,
    intensity: bool,
    label: bool,
    color: bool,
) -> Result<()> {
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply")?;
    writeln!(out, "format {format} 1.0")?;
    writeln!(out, "element vertex {n}")?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    if intensity {
        writeln!(out, "property float intensity")?;
    }
    if color {
        writeln!(out, "property uchar red")?;
        writeln!(out, "property uchar green")?;
        writeln!(out, "property uchar blue")?;
    }
    if label {
        writeln!(out, "property uchar label")?;
    }
    writeln!(out, "end_header")?;
    Ok(())
}

/// Saves a point cloud, storing positions (and intensity) as `float` and
/// labels as `uchar`. `save_ply` followed by [`load_ply`] reproduces the
/// point sequence exactly for coordinates representable in f32.
pub fn save_ply<T: Real>(cloud: &PointCloud<T>, path: &Path, encoding: PlyEncoding) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::with_capacity(1 << 16, file);
    write_header(
        &mut out,
        encoding,
        cloud.len(),
        cloud.has_intensity(),
        cloud.has_labels(),
        false,
    )?;
    let as_f32 = |v: T| v.as_f64() as f32;
    match encoding {
        PlyEncoding::Ascii => {
            for p in cloud.iter() {
                write!(&mut out, "{} {} {}", as_f32(p.x), as_f32(p.y), as_f32(p.z))?;
                if let Some(v) = p.intensity {
                    write!(&mut out, " {}", as_f32(v))?;
                }
                if let Some(l) = p.label {
                    write!(&mut out, " {l}")?;
                }
                writeln!(&mut out)?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for p in cloud.iter() {
                out.write_f32::<LittleEndian>(as_f32(p.x))?;
                out.write_f32::<LittleEndian>(as_f32(p.y))?;
                out.write_f32::<LittleEndian>(as_f32(p.z))?;
                if let Some(v) = p.intensity {
                    out.write_f32::<LittleEndian>(as_f32(v))?;
                }
                if let Some(l) = p.label {
                    out.write_all(&[l])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Saves bare positions with RGB colours (for externally viewable renders
/// such as virtual spheres). Not round-trippable through [`load_ply`].
pub fn save_ply_colored<T: Real>(
    positions: &[[T; 3]],
    colors: &[[u8; 3]],
    path: &Path,
    encoding: PlyEncoding,
) -> Result<()> {
    if positions.len() != colors.len() {
        return Err(Error::dims("save_ply_colored", positions.len(), colors.len()));
    }
    let file = File::create(path)?;
    let mut out = BufWriter::with_capacity(1 << 16, file);
    write_header(&mut out, encoding, positions.len(), false, false, true)?;
    let as_f32 = |v: T| v.as_f64() as f32;
    match encoding {
        PlyEncoding::Ascii => {
            for (p, c) in positions.iter().zip(colors) {
                writeln!(
                    &mut out,
                    "{} {} {} {} {} {}",
                    as_f32(p[0]),
                    as_f32(p[1]),
                    as_f32(p[2]),
                    c[0],
                    c[1],
                    c[2]
                )?;
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            for (p, c) in positions.iter().zip(colors) {
                out.write_f32::<LittleEndian>(as_f32(p[0]))?;
                out.write_f32::<LittleEndian>(as_f32(p[1]))?;
                out.write_f32::<LittleEndian>(as_f32(p[2]))?;
                out.write_all(c)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
