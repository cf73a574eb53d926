//! The native cascade text format.
//!
//! ```text
//! FTCASCADE 1 <baseW> <baseH> <numStages>
//! STAGE <numWeak> <threshold>
//! WEAK <x> <y> <bw> <bh> <leftVal> <rightVal> <lutHex>
//! ...
//! ```
//!
//! Tokens are whitespace separated. `lutHex` is 64 hex digits read as a
//! 256-bit string: LUT bit `i` is bit `3 - i % 4` of hex digit `i / 4`, i.e.
//! the most significant bit of the first digit is code 0.

use std::fmt::Write;

use super::{CascadeModel, Location, Lut, MbLbpFeature, ParseError, Stage, WeakClassifier};

const MAGIC: &str = "FTCASCADE";
const VERSION: u32 = 1;

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    /// Next token and its byte offset.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = self.pos + (rest.len() - rest.trim_start().len());
        if start >= self.text.len() {
            self.pos = self.text.len();
            return None;
        }
        let tail = &self.text[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        self.pos = start + len;
        Some((start, &tail[..len]))
    }

    fn expect(&mut self, stage: usize) -> Result<(usize, &'a str), ParseError> {
        self.next().ok_or(ParseError::Truncated {
            offset: self.text.len(),
            stage,
        })
    }

    fn end(&self) -> usize {
        self.text.len()
    }
}

fn number<T: std::str::FromStr>(tok: (usize, &str), expected: &'static str) -> Result<T, ParseError> {
    tok.1.parse().map_err(|_| ParseError::InvalidToken {
        offset: tok.0,
        expected,
        found: tok.1.to_string(),
    })
}

fn lut_from_hex(tok: (usize, &str)) -> Result<Lut, ParseError> {
    let invalid = || ParseError::InvalidToken {
        offset: tok.0,
        expected: "64 hex digits",
        found: tok.1.to_string(),
    };
    if tok.1.len() != 64 {
        return Err(invalid());
    }
    let mut lut = Lut::default();
    for (j, ch) in tok.1.chars().enumerate() {
        let nibble = ch.to_digit(16).ok_or_else(invalid)?;
        for b in 0..4 {
            if nibble & (8 >> b) != 0 {
                lut.insert((4 * j + b) as u8);
            }
        }
    }
    Ok(lut)
}

fn lut_to_hex(lut: &Lut) -> String {
    let mut s = String::with_capacity(64);
    for j in 0..64 {
        let mut nibble = 0u32;
        for b in 0..4 {
            if lut.contains((4 * j + b) as u8) {
                nibble |= 8 >> b;
            }
        }
        s.push(char::from_digit(nibble, 16).unwrap());
    }
    s
}

/// Parses a native-format cascade. Errors carry the byte offset of the
/// offending token.
pub fn parse_native<'a>(bytes: &'a [u8]) -> Result<CascadeModel, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::MalformedHeader {
        offset: e.valid_up_to(),
        message: "not UTF-8 text".into(),
    })?;
    let mut toks = Tokens::new(text);
    let header_err = |offset: usize, message: &str| ParseError::MalformedHeader {
        offset,
        message: message.to_string(),
    };

    match toks.next() {
        Some((_, MAGIC)) => {}
        Some((off, _)) => return Err(header_err(off, "missing FTCASCADE magic")),
        None => return Err(header_err(0, "empty input")),
    }
    let mut header = [0u32; 4];
    for (i, slot) in header.iter_mut().enumerate() {
        let tok = toks
            .next()
            .ok_or_else(|| header_err(toks.end(), "header is incomplete"))?;
        *slot = tok
            .1
            .parse()
            .map_err(|_| header_err(tok.0, &format!("header field {} is not an unsigned integer", i + 1)))?;
    }
    let [version, base_w, base_h, num_stages] = header;
    if version != VERSION {
        return Err(header_err(0, &format!("unsupported version {version}")));
    }
    if num_stages == 0 {
        return Err(ParseError::EmptyCascade);
    }

    let mut stages = Vec::with_capacity(num_stages as usize);
    for si in 0..num_stages as usize {
        let expect = |toks: &mut Tokens<'a>| toks.expect(si);
        let tag = expect(&mut toks)?;
        if tag.1 != "STAGE" {
            return Err(ParseError::InvalidToken {
                offset: tag.0,
                expected: "STAGE",
                found: tag.1.into(),
            });
        }
        let num_weak_tok = expect(&mut toks)?;
        let num_weak: usize = number(num_weak_tok, "weak classifier count")?;
        let threshold: f32 = number(expect(&mut toks)?, "stage threshold")?;
        if num_weak == 0 {
            return Err(ParseError::EmptyStage {
                stage: si,
                at: Location::Byte(num_weak_tok.0),
            });
        }
        let mut weak = Vec::with_capacity(num_weak);
        for wi in 0..num_weak {
            let tag = expect(&mut toks)?;
            if tag.1 != "WEAK" {
                return Err(ParseError::InvalidToken {
                    offset: tag.0,
                    expected: "WEAK",
                    found: tag.1.into(),
                });
            }
            let x: u32 = number(expect(&mut toks)?, "feature x")?;
            let y: u32 = number(expect(&mut toks)?, "feature y")?;
            let bw: u32 = number(expect(&mut toks)?, "block width")?;
            let bh: u32 = number(expect(&mut toks)?, "block height")?;
            let left: f32 = number(expect(&mut toks)?, "left leaf value")?;
            let right: f32 = number(expect(&mut toks)?, "right leaf value")?;
            let lut = lut_from_hex(expect(&mut toks)?)?;
            let feature = MbLbpFeature::new(x, y, bw, bh);
            if !feature.fits(base_w, base_h) {
                return Err(ParseError::FeatureOutOfWindow {
                    stage: si,
                    weak: wi,
                    feature,
                    at: Location::Byte(tag.0),
                });
            }
            weak.push(WeakClassifier {
                feature,
                lut,
                left,
                right,
            });
        }
        stages.push(Stage::new(weak, threshold).expect("non-empty stage"));
    }
    if let Some((offset, _)) = toks.next() {
        return Err(ParseError::TrailingData { offset });
    }
    CascadeModel::new(base_w, base_h, stages)
}

/// Writes `model` in the native format. Reals use the shortest decimal
/// representation that parses back to the same `f32`.
pub fn serialize_native(model: &CascadeModel) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {}",
        model.base_width(),
        model.base_height(),
        model.num_stages()
    )
    .unwrap();
    for stage in model.stages() {
        writeln!(out, "STAGE {} {}", stage.weak().len(), stage.threshold()).unwrap();
        for w in stage.weak() {
            let f = w.feature;
            writeln!(
                out,
                "WEAK {} {} {} {} {} {} {}",
                f.x,
                f.y,
                f.block_width,
                f.block_height,
                w.left,
                w.right,
                lut_to_hex(&w.lut)
            )
            .unwrap();
        }
    }
    out
}
