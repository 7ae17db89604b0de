//! Point-cloud file formats.
//!
//! PLY (ASCII and binary little-endian) with the properties `x y z` (float),
//! `red green blue` (uchar), `intensity` (float), `label` (ushort) and
//! `instance` (uint), plus a native columnar format that stores positions in
//! double precision.
//!
//! Columnar layout, all integers little-endian:
//!
//! ```text
//! magic "SSEGCOL\0" | u32 version | u64 point count | u32 len + scene id bytes
//! u32 field count | per field: u8 len + name bytes
//! per field, in header order: one contiguous array of n elements
//!   position: 3 x f64, color: 3 x u8, intensity: f32, label: u16, instance: u32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::cloud::{Label, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    PlyAscii,
    PlyBinaryLe,
    Columnar,
}

impl PointFormat {
    /// Guesses a format from the file extension; `.ply` maps to binary.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "ply" => Some(PointFormat::PlyBinaryLe),
            "scol" => Some(PointFormat::Columnar),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PointFormat::PlyAscii => "PLY (ascii)",
            PointFormat::PlyBinaryLe => "PLY (binary_little_endian)",
            PointFormat::Columnar => "columnar",
        }
    }
}

const COLUMNAR_MAGIC: &[u8; 8] = b"SSEGCOL\0";
const COLUMNAR_VERSION: u32 = 1;

pub fn load_pointcloud(path: &Path, format: PointFormat) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fallback_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut pc = decode(&bytes, format)?;
    if pc.scene_id.is_empty() {
        pc.scene_id = fallback_id;
    }
    Ok(pc)
}

/// Loads a PLY file in whichever encoding its header declares, or a columnar file.
pub fn load_auto(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = if bytes.starts_with(COLUMNAR_MAGIC) {
        PointFormat::Columnar
    } else if bytes.starts_with(b"ply") {
        let head = &bytes[..bytes.len().min(64)];
        if head.windows(5).any(|w| w == b"ascii") {
            PointFormat::PlyAscii
        } else {
            PointFormat::PlyBinaryLe
        }
    } else {
        return Err(Error::format(0, "unrecognized point-cloud file"));
    };
    let mut pc = decode(&bytes, format)?;
    if pc.scene_id.is_empty() {
        pc.scene_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(pc)
}

pub fn save_pointcloud(pc: &PointCloud, path: &Path, format: PointFormat) -> Result<()> {
    let bytes = encode(pc, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode(bytes: &[u8], format: PointFormat) -> Result<PointCloud> {
    match format {
        PointFormat::Columnar => decode_columnar(bytes),
        PointFormat::PlyAscii | PointFormat::PlyBinaryLe => decode_ply(bytes, format),
    }
}

pub fn encode(pc: &PointCloud, format: PointFormat) -> Result<Vec<u8>> {
    pc.validate(None)?;
    match format {
        PointFormat::Columnar => encode_columnar(pc),
        PointFormat::PlyAscii | PointFormat::PlyBinaryLe => encode_ply(pc, format),
    }
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    X,
    Y,
    Z,
    Red,
    Green,
    Blue,
    Intensity,
    Label,
    Instance,
    Other,
}

impl Role {
    fn of(name: &str) -> Self {
        match name {
            "x" => Role::X,
            "y" => Role::Y,
            "z" => Role::Z,
            "red" | "r" => Role::Red,
            "green" | "g" => Role::Green,
            "blue" | "b" => Role::Blue,
            "intensity" | "scalar_intensity" => Role::Intensity,
            "label" | "class" | "scalar_label" => Role::Label,
            "instance" | "scalar_instance" => Role::Instance,
            _ => Role::Other,
        }
    }
}

struct PlyHeader {
    format: PointFormat,
    scene_id: String,
    vertex_count: usize,
    props: Vec<(Role, Scalar)>,
    body_offset: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let mut offset = 0usize;
    let mut lines = bytes.split_inclusive(|&b| b == b'\n');
    let mut next_line = |offset: &mut usize| -> Result<(usize, String)> {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(*offset as u64, "unexpected end of PLY header"))?;
        let start = *offset;
        *offset += line.len();
        let text = std::str::from_utf8(line)
            .map_err(|_| Error::format(start as u64, "PLY header is not UTF-8"))?;
        Ok((start, text.trim_end_matches(['\n', '\r']).to_string()))
    };

    let (_, magic) = next_line(&mut offset)?;
    if magic != "ply" {
        return Err(Error::format(0, "missing `ply` magic"));
    }
    let mut format = None;
    let mut scene_id = String::new();
    let mut vertex_count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    loop {
        let (start, line) = next_line(&mut offset)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => PointFormat::PlyAscii,
                    Some("binary_little_endian") => PointFormat::PlyBinaryLe,
                    other => {
                        return Err(Error::format(
                            start as u64,
                            format!("unsupported PLY format {other:?}"),
                        ))
                    }
                });
            }
            Some("comment") => {
                if let Some(rest) = line.trim_start().strip_prefix("comment scene_id ") {
                    scene_id = rest.to_string();
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().unwrap_or_default();
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format(start as u64, "bad element count"))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::format(start as u64, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else if count > 0 {
                    return Err(Error::format(
                        start as u64,
                        format!("unsupported non-empty element `{name}`"),
                    ));
                } else {
                    in_vertex = false;
                }
            }
            Some("property") => {
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    if in_vertex {
                        return Err(Error::format(
                            start as u64,
                            "list properties on vertices are not supported",
                        ));
                    }
                    continue;
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| {
                    Error::format(start as u64, format!("unknown property type `{ty}`"))
                })?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::format(start as u64, "property without a name"))?;
                if in_vertex {
                    props.push((Role::of(name), scalar));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::format(
                    start as u64,
                    format!("unexpected header keyword `{other}`"),
                ))
            }
            None => {}
        }
    }
    let format = format.ok_or_else(|| Error::format(0, "PLY header has no format line"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| Error::format(0, "PLY header has no vertex element"))?;
    for axis in [Role::X, Role::Y, Role::Z] {
        if !props.iter().any(|p| p.0 == axis) {
            return Err(Error::format(
                0,
                format!("PLY vertex lacks {axis:?} property"),
            ));
        }
    }
    Ok(PlyHeader {
        format,
        scene_id,
        vertex_count,
        props,
        body_offset: offset,
    })
}

fn has(props: &[(Role, Scalar)], role: Role) -> bool {
    props.iter().any(|p| p.0 == role)
}

fn decode_ply(bytes: &[u8], declared: PointFormat) -> Result<PointCloud> {
    let header = parse_ply_header(bytes)?;
    if header.format != declared {
        return Err(Error::format(
            0,
            format!(
                "file is {} but was declared {}",
                header.format.name(),
                declared.name()
            ),
        ));
    }
    let n = header.vertex_count;
    let props = &header.props;
    let has_color = has(props, Role::Red) || has(props, Role::Green) || has(props, Role::Blue);
    let mut pc = PointCloud {
        scene_id: header.scene_id.clone(),
        positions: Vec::with_capacity(n),
        colors: has_color.then(|| Vec::with_capacity(n)),
        intensity: has(props, Role::Intensity).then(|| Vec::with_capacity(n)),
        labels: has(props, Role::Label).then(|| Vec::with_capacity(n)),
        instances: has(props, Role::Instance).then(|| Vec::with_capacity(n)),
    };
    let mut row = vec![0f64; props.len()];
    let push_row = |pc: &mut PointCloud, row: &[f64], at: u64| -> Result<()> {
        let mut pos = [0.0; 3];
        let mut col = [0u8; 3];
        let mut intensity = 0f32;
        let mut label = 0 as Label;
        let mut instance = 0u32;
        for (&(role, _), &v) in props.iter().zip(row) {
            match role {
                Role::X => pos[0] = v,
                Role::Y => pos[1] = v,
                Role::Z => pos[2] = v,
                Role::Red => col[0] = to_int(v, at, "red")?,
                Role::Green => col[1] = to_int(v, at, "green")?,
                Role::Blue => col[2] = to_int(v, at, "blue")?,
                Role::Intensity => intensity = v as f32,
                Role::Label => label = to_int(v, at, "label")?,
                Role::Instance => instance = to_int(v, at, "instance")?,
                Role::Other => {}
            }
        }
        pc.positions.push(pos);
        if let Some(c) = pc.colors.as_mut() {
            c.push(col);
        }
        if let Some(c) = pc.intensity.as_mut() {
            c.push(intensity);
        }
        if let Some(c) = pc.labels.as_mut() {
            c.push(label);
        }
        if let Some(c) = pc.instances.as_mut() {
            c.push(instance);
        }
        Ok(())
    };

    let body = &bytes[header.body_offset..];
    match header.format {
        PointFormat::PlyBinaryLe => {
            let stride: usize = props.iter().map(|p| p.1.size()).sum();
            for i in 0..n {
                let start = i * stride;
                let at = (header.body_offset + start) as u64;
                if start + stride > body.len() {
                    return Err(Error::format(
                        at,
                        format!("truncated payload: vertex {i} of {n} is missing"),
                    ));
                }
                let mut o = start;
                for (slot, &(_, ty)) in row.iter_mut().zip(props) {
                    *slot = ty.read_le(&body[o..]);
                    o += ty.size();
                }
                push_row(&mut pc, &row, at)?;
            }
        }
        PointFormat::PlyAscii => {
            let mut offset = header.body_offset;
            let mut lines = body.split_inclusive(|&b| b == b'\n');
            let mut i = 0;
            while i < n {
                let Some(line) = lines.next() else {
                    return Err(Error::format(
                        offset as u64,
                        format!("truncated payload: vertex {i} of {n} is missing"),
                    ));
                };
                let at = offset as u64;
                offset += line.len();
                let text = std::str::from_utf8(line)
                    .map_err(|_| Error::format(at, "vertex line is not UTF-8"))?;
                if text.trim().is_empty() {
                    continue;
                }
                let mut count = 0;
                for ((slot, &(_, ty)), word) in
                    row.iter_mut().zip(props).zip(text.split_whitespace())
                {
                    let bad = |_| Error::format(at, format!("bad number `{word}`"));
                    // Single-precision text must round-trip to the same f32.
                    *slot = match ty {
                        Scalar::F32 => word.parse::<f32>().map_err(bad)? as f64,
                        _ => word.parse::<f64>().map_err(bad)?,
                    };
                    count += 1;
                }
                if count != props.len() || text.split_whitespace().count() != props.len() {
                    return Err(Error::format(
                        at,
                        format!(
                            "vertex {i} has {} values, expected {}",
                            text.split_whitespace().count(),
                            props.len()
                        ),
                    ));
                }
                push_row(&mut pc, &row, at)?;
                i += 1;
            }
        }
        PointFormat::Columnar => unreachable!(),
    }
    Ok(pc)
}

fn to_int<T: TryFrom<i64>>(v: f64, at: u64, field: &str) -> Result<T> {
    if v.fract() != 0.0 {
        return Err(Error::format(
            at,
            format!("{field} value {v} is not an integer"),
        ));
    }
    T::try_from(v as i64).map_err(|_| Error::format(at, format!("{field} value {v} out of range")))
}

fn encode_ply(pc: &PointCloud, format: PointFormat) -> Result<Vec<u8>> {
    if pc.scene_id.contains(['\n', '\r']) {
        return Err(Error::Unrepresentable {
            field: "scene_id",
            format: format.name(),
            reason: "scene id contains a line break".into(),
        });
    }
    if let Some(i) = pc
        .positions
        .iter()
        .position(|p| p.iter().any(|&c| !(c as f32).is_finite()))
    {
        return Err(Error::Unrepresentable {
            field: "positions",
            format: format.name(),
            reason: format!("position {i} overflows single precision"),
        });
    }
    let mut out = Vec::new();
    let enc = if format == PointFormat::PlyAscii {
        "ascii"
    } else {
        "binary_little_endian"
    };
    let mut header = format!("ply\nformat {enc} 1.0\n");
    if !pc.scene_id.is_empty() {
        header.push_str(&format!("comment scene_id {}\n", pc.scene_id));
    }
    header.push_str(&format!("element vertex {}\n", pc.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if pc.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if pc.intensity.is_some() {
        header.push_str("property float intensity\n");
    }
    if pc.labels.is_some() {
        header.push_str("property ushort label\n");
    }
    if pc.instances.is_some() {
        header.push_str("property uint instance\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());

    for i in 0..pc.len() {
        let p = pc.positions[i].map(|c| c as f32);
        if format == PointFormat::PlyAscii {
            let mut line = format!("{} {} {}", p[0], p[1], p[2]);
            if let Some(c) = &pc.colors {
                line.push_str(&format!(" {} {} {}", c[i][0], c[i][1], c[i][2]));
            }
            if let Some(v) = &pc.intensity {
                line.push_str(&format!(" {}", v[i]));
            }
            if let Some(v) = &pc.labels {
                line.push_str(&format!(" {}", v[i]));
            }
            if let Some(v) = &pc.instances {
                line.push_str(&format!(" {}", v[i]));
            }
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        } else {
            for c in p {
                out.write_f32::<LittleEndian>(c).unwrap();
            }
            if let Some(c) = &pc.colors {
                out.extend_from_slice(&c[i]);
            }
            if let Some(v) = &pc.intensity {
                out.write_f32::<LittleEndian>(v[i]).unwrap();
            }
            if let Some(v) = &pc.labels {
                out.write_u16::<LittleEndian>(v[i]).unwrap();
            }
            if let Some(v) = &pc.instances {
                out.write_u32::<LittleEndian>(v[i]).unwrap();
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Columnar

const FIELD_POSITION: &str = "position";
const FIELD_COLOR: &str = "color";
const FIELD_INTENSITY: &str = "intensity";
const FIELD_LABEL: &str = "label";
const FIELD_INSTANCE: &str = "instance";

fn encode_columnar(pc: &PointCloud) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(COLUMNAR_MAGIC);
    out.write_u32::<LittleEndian>(COLUMNAR_VERSION).unwrap();
    out.write_u64::<LittleEndian>(pc.len() as u64).unwrap();
    out.write_u32::<LittleEndian>(pc.scene_id.len() as u32)
        .unwrap();
    out.extend_from_slice(pc.scene_id.as_bytes());
    let mut fields = vec![FIELD_POSITION];
    if pc.colors.is_some() {
        fields.push(FIELD_COLOR);
    }
    if pc.intensity.is_some() {
        fields.push(FIELD_INTENSITY);
    }
    if pc.labels.is_some() {
        fields.push(FIELD_LABEL);
    }
    if pc.instances.is_some() {
        fields.push(FIELD_INSTANCE);
    }
    out.write_u32::<LittleEndian>(fields.len() as u32).unwrap();
    for f in &fields {
        out.write_u8(f.len() as u8).unwrap();
        out.extend_from_slice(f.as_bytes());
    }
    for p in &pc.positions {
        for &c in p {
            out.write_f64::<LittleEndian>(c).unwrap();
        }
    }
    if let Some(c) = &pc.colors {
        for rgb in c {
            out.extend_from_slice(rgb);
        }
    }
    if let Some(v) = &pc.intensity {
        for &x in v {
            out.write_f32::<LittleEndian>(x).unwrap();
        }
    }
    if let Some(v) = &pc.labels {
        for &x in v {
            out.write_u16::<LittleEndian>(x).unwrap();
        }
    }
    if let Some(v) = &pc.instances {
        for &x in v {
            out.write_u32::<LittleEndian>(x).unwrap();
        }
    }
    Ok(out)
}

/// Cursor that reports byte offsets in its errors.
struct Reader<'a> {
    inner: std::io::Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn pos(&self) -> u64 {
        self.inner.position()
    }

    fn eof(&self, what: &str) -> Error {
        Error::format(
            self.pos(),
            format!("truncated payload while reading {what}"),
        )
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.inner.read_u8().map_err(|_| self.eof(what))
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        self.inner
            .read_u16::<LittleEndian>()
            .map_err(|_| self.eof(what))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        self.inner
            .read_u32::<LittleEndian>()
            .map_err(|_| self.eof(what))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        self.inner
            .read_u64::<LittleEndian>()
            .map_err(|_| self.eof(what))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        self.inner
            .read_f32::<LittleEndian>()
            .map_err(|_| self.eof(what))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        self.inner
            .read_f64::<LittleEndian>()
            .map_err(|_| self.eof(what))
    }
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.eof(what))?;
        Ok(buf)
    }
    fn remaining(&self) -> u64 {
        self.inner.get_ref().len() as u64 - self.pos()
    }
}

fn decode_columnar(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader {
        inner: std::io::Cursor::new(bytes),
    };
    if r.bytes(8, "magic")? != COLUMNAR_MAGIC {
        return Err(Error::format(0, "bad columnar magic"));
    }
    let version = r.u32("version")?;
    if version != COLUMNAR_VERSION {
        return Err(Error::format(
            8,
            format!("unsupported columnar version {version}"),
        ));
    }
    let n = r.u64("point count")? as usize;
    let id_len = r.u32("scene id length")? as usize;
    let at = r.pos();
    let scene_id = String::from_utf8(r.bytes(id_len, "scene id")?)
        .map_err(|_| Error::format(at, "scene id is not UTF-8"))?;
    let field_count = r.u32("field count")?;
    let mut fields = Vec::new();
    for _ in 0..field_count {
        let len = r.u8("field name length")? as usize;
        let at = r.pos();
        let name = String::from_utf8(r.bytes(len, "field name")?)
            .map_err(|_| Error::format(at, "field name is not UTF-8"))?;
        fields.push(name);
    }
    if fields.first().map(String::as_str) != Some(FIELD_POSITION) {
        return Err(Error::format(
            r.pos(),
            "first columnar field must be `position`",
        ));
    }
    let mut pc = PointCloud::new(scene_id, Vec::new());
    for field in &fields {
        let elem = match field.as_str() {
            FIELD_POSITION => 24,
            FIELD_COLOR => 3,
            FIELD_INTENSITY | FIELD_INSTANCE => 4,
            FIELD_LABEL => 2,
            other => {
                return Err(Error::format(r.pos(), format!("unknown field `{other}`")));
            }
        };
        if r.remaining() < (n * elem) as u64 {
            return Err(Error::format(
                r.pos(),
                format!(
                    "truncated payload: field `{field}` needs {} bytes, {} remain",
                    n * elem,
                    r.remaining()
                ),
            ));
        }
        match field.as_str() {
            FIELD_POSITION => {
                pc.positions = (0..n)
                    .map(|_| Ok([r.f64("x")?, r.f64("y")?, r.f64("z")?]))
                    .collect::<Result<_>>()?;
            }
            FIELD_COLOR => {
                pc.colors = Some(
                    (0..n)
                        .map(|_| Ok([r.u8("red")?, r.u8("green")?, r.u8("blue")?]))
                        .collect::<Result<_>>()?,
                );
            }
            FIELD_INTENSITY => {
                pc.intensity = Some((0..n).map(|_| r.f32("intensity")).collect::<Result<_>>()?);
            }
            FIELD_LABEL => {
                pc.labels = Some((0..n).map(|_| r.u16("label")).collect::<Result<_>>()?);
            }
            FIELD_INSTANCE => {
                pc.instances = Some((0..n).map(|_| r.u32("instance")).collect::<Result<_>>()?);
            }
            _ => unreachable!(),
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.pos(), "trailing bytes after last field"));
    }
    Ok(pc)
}

/// Writes `pc` as a plain-text table (`x y z [r g b] [label]`), mainly for inspection.
pub fn write_xyz<W: Write>(pc: &PointCloud, mut w: W) -> std::io::Result<()> {
    for i in 0..pc.len() {
        let p = pc.positions[i];
        write!(w, "{} {} {}", p[0], p[1], p[2])?;
        if let Some(c) = &pc.colors {
            write!(w, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
        }
        if let Some(l) = &pc.labels {
            write!(w, " {}", l[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}
