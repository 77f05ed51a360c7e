//! Minimal PLY reader/writer: ASCII and binary encodings, scalar and list properties.
//!
//! Elements are stored column-wise. Scalar properties become `Vec<f64>`; list
//! properties become `Vec<Vec<f64>>`. Writing always emits binary little-endian.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => num!(i16, 2),
            Self::U16 => num!(u16, 2),
            Self::I32 => num!(i32, 4),
            Self::U32 => num!(u32, 4),
            Self::F32 => num!(f32, 4),
            Self::F64 => num!(f64, 8),
        }
    }

    fn encode_le(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::I8 => out.push(v as i8 as u8),
            Self::U8 => out.push(v as u8),
            Self::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Scalar { ty: ScalarType, values: Vec<f64> },
    List { count_ty: ScalarType, item_ty: ScalarType, values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub name: String,
    pub column: Column,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

impl Element {
    pub fn new(name: impl Into<String>, count: usize) -> Self {
        Self {
            name: name.into(),
            count,
            properties: Vec::new(),
        }
    }

    pub fn with_scalar(mut self, name: impl Into<String>, ty: ScalarType, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.count);
        self.properties.push(Property {
            name: name.into(),
            column: Column::Scalar { ty, values },
        });
        self
    }

    pub fn with_list(
        mut self,
        name: impl Into<String>,
        count_ty: ScalarType,
        item_ty: ScalarType,
        values: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(values.len(), self.count);
        self.properties.push(Property {
            name: name.into(),
            column: Column::List { count_ty, item_ty, values },
        });
        self
    }

    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.properties.iter().find(|p| p.name == name).and_then(|p| match &p.column {
            Column::Scalar { values, .. } => Some(values.as_slice()),
            _ => None,
        })
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.properties.iter().find(|p| p.name == name).and_then(|p| match &p.column {
            Column::List { values, .. } => Some(values.as_slice()),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyFile {
    pub encoding: Encoding,
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

pub fn read(path: &Path) -> Result<PlyFile> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse(BufReader::new(f), path)
}

pub fn parse<R: BufRead>(mut r: R, path: &Path) -> Result<PlyFile> {
    let perr = |msg: String| Error::parse(path, msg);
    let mut line = String::new();
    let mut offset = 0usize;
    let mut read_line = |r: &mut R, line: &mut String| -> Result<usize> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        offset += n;
        Ok(offset)
    };
    read_line(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(perr("missing `ply` magic".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut lineno = 1;
    loop {
        let off = read_line(&mut r, &mut line)?;
        lineno += 1;
        if line.is_empty() {
            return Err(perr(format!("unexpected end of header at byte {off}")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    Some("binary_big_endian") => Encoding::BinaryBigEndian,
                    other => return Err(perr(format!("line {lineno}: unknown format {other:?}"))),
                })
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let (Some(name), Some(count)) = (toks.get(1), toks.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(perr(format!("line {lineno}: malformed element declaration")));
                };
                elements.push(Element::new(*name, count));
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(format!("line {lineno}: property before element")))?;
                let column = if toks.get(1) == Some(&"list") {
                    let (Some(c), Some(i)) = (
                        toks.get(2).and_then(|t| ScalarType::parse(t)),
                        toks.get(3).and_then(|t| ScalarType::parse(t)),
                    ) else {
                        return Err(perr(format!("line {lineno}: bad list property")));
                    };
                    Column::List {
                        count_ty: c,
                        item_ty: i,
                        values: Vec::with_capacity(el.count),
                    }
                } else {
                    let ty = toks
                        .get(1)
                        .and_then(|t| ScalarType::parse(t))
                        .ok_or_else(|| perr(format!("line {lineno}: bad property type")))?;
                    Column::Scalar {
                        ty,
                        values: Vec::with_capacity(el.count),
                    }
                };
                let name = toks.last().filter(|_| toks.len() >= 3).ok_or_else(|| perr(format!("line {lineno}: property without name")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    column,
                });
            }
            Some("end_header") => break,
            _ => return Err(perr(format!("line {lineno}: unexpected header line {:?}", line.trim_end()))),
        }
    }
    let encoding = encoding.ok_or_else(|| perr("missing format line".into()))?;
    match encoding {
        Encoding::Ascii => read_ascii_body(r, &mut elements, path, lineno)?,
        _ => read_binary_body(r, &mut elements, encoding == Encoding::BinaryLittleEndian, path, offset)?,
    }
    Ok(PlyFile { encoding, elements })
}

fn read_ascii_body<R: BufRead>(r: R, elements: &mut [Element], path: &Path, header_lines: usize) -> Result<()> {
    let mut lines = r.lines().enumerate();
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, format!("unexpected end of data in element `{}`", el.name)))?;
            let lineno = header_lines + i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut toks = line.split_whitespace();
            let mut next = || -> Result<f64> {
                toks.next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(path, format!("line {lineno}: expected a number")))
            };
            for p in el.properties.iter_mut() {
                match &mut p.column {
                    Column::Scalar { values, .. } => values.push(next()?),
                    Column::List { values, .. } => {
                        let n = next()? as usize;
                        let mut v = Vec::with_capacity(n);
                        for _ in 0..n {
                            v.push(next()?);
                        }
                        values.push(v);
                    }
                }
            }
        }
    }
    Ok(())
}

fn read_binary_body<R: Read>(mut r: R, elements: &mut [Element], little: bool, path: &Path, start: usize) -> Result<()> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if pos + n > buf.len() {
            return Err(Error::parse(path, format!("truncated {what} at byte offset {}", start + pos)));
        }
        let s = &buf[pos..pos + n];
        pos += n;
        Ok(s)
    };
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            for p in el.properties.iter_mut() {
                match &mut p.column {
                    Column::Scalar { ty, values } => {
                        let t = *ty;
                        values.push(t.decode(take(t.size(), &el.name)?, little));
                    }
                    Column::List { count_ty, item_ty, values } => {
                        let (c, it) = (*count_ty, *item_ty);
                        let n = c.decode(take(c.size(), &el.name)?, little) as usize;
                        let mut v = Vec::with_capacity(n);
                        for _ in 0..n {
                            v.push(it.decode(take(it.size(), &el.name)?, little));
                        }
                        values.push(v);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Serialize as binary little-endian.
pub fn to_bytes(file: &PlyFile) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for el in &file.elements {
        header.push_str(&format!("element {} {}\n", el.name, el.count));
        for p in &el.properties {
            match &p.column {
                Column::Scalar { ty, .. } => header.push_str(&format!("property {} {}\n", ty.name(), p.name)),
                Column::List { count_ty, item_ty, .. } => header.push_str(&format!(
                    "property list {} {} {}\n",
                    count_ty.name(),
                    item_ty.name(),
                    p.name
                )),
            }
        }
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for el in &file.elements {
        for row in 0..el.count {
            for p in &el.properties {
                match &p.column {
                    Column::Scalar { ty, values } => ty.encode_le(values[row], &mut out),
                    Column::List { count_ty, item_ty, values } => {
                        count_ty.encode_le(values[row].len() as f64, &mut out);
                        for v in &values[row] {
                            item_ty.encode_le(*v, &mut out);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Serialize as ASCII (used for small fixtures and human inspection).
pub fn to_ascii(file: &PlyFile) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    for el in &file.elements {
        s.push_str(&format!("element {} {}\n", el.name, el.count));
        for p in &el.properties {
            match &p.column {
                Column::Scalar { ty, .. } => s.push_str(&format!("property {} {}\n", ty.name(), p.name)),
                Column::List { count_ty, item_ty, .. } => {
                    s.push_str(&format!("property list {} {} {}\n", count_ty.name(), item_ty.name(), p.name))
                }
            }
        }
    }
    s.push_str("end_header\n");
    for el in &file.elements {
        for row in 0..el.count {
            let mut toks = Vec::new();
            for p in &el.properties {
                match &p.column {
                    Column::Scalar { values, .. } => toks.push(format!("{}", values[row])),
                    Column::List { values, .. } => {
                        toks.push(values[row].len().to_string());
                        toks.extend(values[row].iter().map(|v| format!("{v}")));
                    }
                }
            }
            s.push_str(&toks.join(" "));
            s.push('\n');
        }
    }
    s
}

pub fn write(path: &Path, file: &PlyFile) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(file)).map_err(|e| Error::io(path, e))
}
