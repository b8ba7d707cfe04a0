//! `MOODDS01` dataset files.
//!
//! ```text
//! "MOODDS01" | u32 LE header length | TOML header ending in '\n'
//! | f32 LE states | actions | rewards | next_states
//! | terminals bit-packed | episode_starts bit-packed
//! ```
//! Bits are packed LSB-first, `ceil(rows / 8)` bytes per flag column.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Columns, Dataset, EnvId, Task};
use crate::error::{Error, ParseError, Result};

pub const MAGIC: &[u8; 8] = b"MOODDS01";
const FIELDS: [&str; 6] = [
    "states",
    "actions",
    "rewards",
    "next_states",
    "terminals",
    "episode_starts",
];

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    env: EnvId,
    source_tasks: Vec<String>,
    target_task: Task,
    state_dim: usize,
    action_dim: usize,
    rows: usize,
    max_return: f64,
    fields: Vec<String>,
}

fn section_lengths(rows: usize, sd: usize, ad: usize) -> [(&'static str, usize); 6] {
    let bits = rows.div_ceil(8);
    [
        ("states", 4 * rows * sd),
        ("actions", 4 * rows * ad),
        ("rewards", 4 * rows),
        ("next_states", 4 * rows * sd),
        ("terminals", bits),
        ("episode_starts", bits),
    ]
}

fn payload_len(rows: usize, sd: usize, ad: usize) -> usize {
    section_lengths(rows, sd, ad).iter().map(|(_, l)| l).sum()
}

fn pack_bits(flags: &[bool], out: &mut Vec<u8>) {
    for chunk in flags.chunks(8) {
        out.push(
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |b, (i, &f)| b | ((f as u8) << i)),
        );
    }
}

fn unpack_bits(bytes: &[u8], rows: usize) -> Vec<bool> {
    (0..rows)
        .map(|i| bytes[i / 8] >> (i % 8) & 1 == 1)
        .collect()
}

pub fn write_to<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let meta = ds.meta();
    let header = Header {
        env: meta.env,
        source_tasks: meta.source_tasks.clone(),
        target_task: meta.target_task,
        state_dim: ds.state_dim(),
        action_dim: ds.action_dim(),
        rows: ds.len(),
        max_return: meta.max_return,
        fields: FIELDS.iter().map(|s| s.to_string()).collect(),
    };
    let mut text = toml::to_string(&header).map_err(|e| Error::invalid(e.to_string()))?;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    let c = ds.columns();
    let mut buf = Vec::with_capacity(payload_len(ds.len(), ds.state_dim(), ds.action_dim()));
    for v in c
        .states
        .iter()
        .chain(c.actions.iter())
        .chain(c.rewards.iter())
        .chain(c.next_states.iter())
    {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    pack_bits(&c.terminals, &mut buf);
    pack_bits(&c.episode_starts, &mut buf);
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn floats(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect()
}

fn parse(bytes: &[u8]) -> std::result::Result<(Header, Columns), ParseError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ParseError::BadMagic);
    }
    let len_bytes = bytes.get(8..12).ok_or(ParseError::Truncated {
        section: "header-length",
    })?;
    let hlen = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or(ParseError::Truncated { section: "header" })?;
    let text =
        std::str::from_utf8(body).map_err(|_| ParseError::Header("header is not UTF-8".into()))?;
    if !text.ends_with('\n') {
        return Err(ParseError::Header("header must end with a newline".into()));
    }
    let h: Header =
        toml::from_str(text).map_err(|e| ParseError::Header(e.message().to_string()))?;
    if h.fields != FIELDS {
        return Err(ParseError::Header(format!(
            "unexpected field order {:?}",
            h.fields
        )));
    }
    if h.state_dim != h.env.state_dim() || h.action_dim != h.env.action_dim() {
        return Err(ParseError::Dimension {
            section: "header",
            detail: format!(
                "{} has state/action dims {}/{}, header says {}/{}",
                h.env,
                h.env.state_dim(),
                h.env.action_dim(),
                h.state_dim,
                h.action_dim
            ),
        });
    }
    let (sd, ad) = (h.state_dim, h.action_dim);
    let payload = &bytes[12 + hlen..];
    let expected = payload_len(h.rows, sd, ad);
    if payload.len() != expected {
        // a payload that is well-formed for some other row count means the
        // header is inconsistent, anything else is a cut-off file
        let per_row_floats = 4 * (2 * sd + ad + 1);
        let guess = payload.len() / per_row_floats;
        let consistent =
            (guess.saturating_sub(1)..=guess + 1).any(|r| payload_len(r, sd, ad) == payload.len());
        if consistent || payload.len() > expected {
            return Err(ParseError::Dimension {
                section: "rows",
                detail: format!(
                    "header declares {} rows ({expected} payload bytes) but payload holds {} bytes",
                    h.rows,
                    payload.len()
                ),
            });
        }
        let mut offset = 0;
        for (name, len) in section_lengths(h.rows, sd, ad) {
            offset += len;
            if payload.len() < offset {
                return Err(ParseError::Truncated { section: name });
            }
        }
    }
    let mut sections = section_lengths(h.rows, sd, ad)
        .into_iter()
        .scan(0usize, |off, (_, len)| {
            let s = &payload[*off..*off + len];
            *off += len;
            Some(s)
        });
    let mut next = || sections.next().expect("six sections");
    let n = h.rows;
    let states = Array2::from_shape_vec((n, sd), floats(next())).expect("sized above");
    let actions = Array2::from_shape_vec((n, ad), floats(next())).expect("sized above");
    let rewards = Array1::from(floats(next()));
    let next_states = Array2::from_shape_vec((n, sd), floats(next())).expect("sized above");
    let terminals = unpack_bits(next(), n);
    let episode_starts = unpack_bits(next(), n);
    Ok((
        h,
        Columns {
            states,
            actions,
            rewards,
            next_states,
            terminals,
            episode_starts,
        },
    ))
}

pub fn read_from<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (h, cols) = parse(&bytes)?;
    let ds = Dataset::new(h.env, h.source_tasks, h.target_task, cols)
        .map_err(|e| ParseError::Header(format!("invalid contents: {e}")))?;
    if ds.max_return() != h.max_return {
        return Err(ParseError::Header(format!(
            "stored max_return {} disagrees with recomputed {}",
            h.max_return,
            ds.max_return()
        ))
        .into());
    }
    Ok(ds)
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_to(ds, std::io::BufWriter::new(f))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    read_from(bytes.as_slice())
}
