use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// End of the layout-addressable area. Bytes 244..248 are padding and
/// 248..256 hold the card signature.
pub const PAYLOAD_END: usize = 244;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoding {
    /// Unsigned little-endian integer, 1 to 8 bytes.
    UintLe,
    /// u16 count of days since 2000-01-01.
    DateD2000,
    /// u32 amount in cents.
    MoneyCents,
    /// Bit set, bit `i` is bit `i % 8` of byte `i / 8`.
    Bitset,
    /// Uninterpreted bytes.
    Opaque,
    /// Sequence of (start, end) quarter-hour pairs.
    QuarterHourPair,
}

impl Encoding {
    pub fn name(self) -> &'static str {
        match self {
            Encoding::UintLe => "UINT-LE",
            Encoding::DateD2000 => "DATE-D2000",
            Encoding::MoneyCents => "MONEY-CENTS",
            Encoding::Bitset => "BITSET",
            Encoding::Opaque => "OPAQUE",
            Encoding::QuarterHourPair => "QUARTER-HOUR-PAIR",
        }
    }

    fn accepts_len(self, len: usize) -> bool {
        match self {
            Encoding::UintLe => (1..=8).contains(&len),
            Encoding::DateD2000 => len == 2,
            Encoding::MoneyCents => len == 4,
            Encoding::Bitset | Encoding::Opaque => len >= 1,
            Encoding::QuarterHourPair => len >= 2 && len.is_multiple_of(2),
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "UINT-LE" => Encoding::UintLe,
            "DATE-D2000" => Encoding::DateD2000,
            "MONEY-CENTS" => Encoding::MoneyCents,
            "BITSET" => Encoding::Bitset,
            "OPAQUE" => Encoding::Opaque,
            "QUARTER-HOUR-PAIR" => Encoding::QuarterHourPair,
            other => return Err(format!("unknown encoding `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub offset: usize,
    pub length: usize,
    pub encoding: Encoding,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, offset: usize, length: usize, encoding: Encoding) -> Self {
        Self {
            name: name.into(),
            offset,
            length,
            encoding,
        }
    }

    pub fn end(&self) -> usize {
        self.offset + self.length
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.end()
    }
}

/// Validated template mapping field names to byte ranges of a card.
///
/// Fields are addressed either by name or by their index in the field list
/// (the field id used by queued card writes on the bus).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    id: u16,
    fields: Vec<FieldSpec>,
}

pub fn define_layout(fields: Vec<FieldSpec>, layout_id: u16) -> Result<Layout> {
    if layout_id == 0 {
        return Err(Error::InvalidLayoutId);
    }
    for (i, f) in fields.iter().enumerate() {
        if f.end() > PAYLOAD_END {
            return Err(Error::FieldOutOfRange(f.name.clone()));
        }
        if !f.encoding.accepts_len(f.length) {
            return Err(Error::InvalidLength(f.name.clone()));
        }
        for g in &fields[..i] {
            if g.name == f.name {
                return Err(Error::DuplicateName(f.name.clone()));
            }
            if g.offset < f.end() && f.offset < g.end() {
                return Err(Error::OverlappingFields(g.name.clone(), f.name.clone()));
            }
        }
    }
    Ok(Layout { id: layout_id, fields })
}

impl Layout {
    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_id(&self, name: &str) -> Option<u8> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .and_then(|i| u8::try_from(i).ok())
    }

    pub fn field_by_id(&self, id: u8) -> Option<&FieldSpec> {
        self.fields.get(id as usize)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&FieldSpec> {
        self.field(name).ok_or_else(|| Error::UnknownField(name.to_string()))
    }

    /// Parses the text layout format:
    ///
    /// ```text
    /// layout 7
    /// # name offset length encoding
    /// balance 0 4 MONEY-CENTS
    /// ```
    pub fn parse(text: &str) -> Result<Layout> {
        let mut id = None;
        let mut fields = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let syntax = |msg: String| Error::LayoutSyntax { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if id.is_none() {
                match parts.as_slice() {
                    ["layout", n] => {
                        id = Some(n.parse::<u16>().map_err(|e| syntax(e.to_string()))?);
                        continue;
                    }
                    _ => return Err(syntax("expected `layout <id>` first".into())),
                }
            }
            let [name, offset, length, encoding] = parts.as_slice() else {
                return Err(syntax("expected `name offset length encoding`".into()));
            };
            fields.push(FieldSpec {
                name: name.to_string(),
                offset: offset.parse().map_err(|_| syntax(format!("bad offset `{offset}`")))?,
                length: length.parse().map_err(|_| syntax(format!("bad length `{length}`")))?,
                encoding: encoding.parse().map_err(syntax)?,
            });
        }
        let id = id.ok_or(Error::LayoutSyntax {
            line: 0,
            msg: "empty layout file".into(),
        })?;
        define_layout(fields, id)
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layout {}", self.id)?;
        for field in &self.fields {
            writeln!(f, "{} {} {} {}", field.name, field.offset, field.length, field.encoding)?;
        }
        Ok(())
    }
}
