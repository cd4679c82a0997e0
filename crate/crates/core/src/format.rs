//! Binary relation files.
//!
//! A file starts with a UTF-8 header of `name=value` lines closed by an empty
//! line, followed by the tuples: key components as little-endian `u64`, then
//! the array as little-endian `f64` in row-major order. Physical dumps add a
//! `sites` header entry and prefix each tuple with its site as `u64`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ia::PhysicalRelation;
use crate::model::{ArrayType, DenseArray, Key, TensorRelation};

const MAGIC: &str = "tra-relation 1";

type Tuples = Vec<(Key, DenseArray)>;

fn header(key_arity: usize, ty: &ArrayType, count: usize, sites: Option<usize>) -> String {
    let bound: Vec<String> = ty.bound().iter().map(usize::to_string).collect();
    let mut h = format!("{MAGIC}\nkeyArity={key_arity}\nrank={}\nbound={}\ncount={count}\n", ty.rank(), bound.join(","));
    if let Some(s) = sites {
        h.push_str(&format!("sites={s}\n"));
    }
    h.push('\n');
    h
}

fn push_tuple(out: &mut Vec<u8>, key: &[u64], a: &DenseArray) {
    for k in key {
        out.extend_from_slice(&k.to_le_bytes());
    }
    for v in a.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Encodes tuples in the order given (callers pass canonical order).
pub fn encode_tuples(key_arity: usize, ty: &ArrayType, tuples: &[(Key, DenseArray)]) -> Vec<u8> {
    let mut out = header(key_arity, ty, tuples.len(), None).into_bytes();
    out.reserve(tuples.len() * (key_arity + ty.len()) * 8);
    for (k, a) in tuples {
        push_tuple(&mut out, k, a);
    }
    out
}

pub fn write_relation(rel: &TensorRelation) -> Vec<u8> {
    encode_tuples(rel.key_arity(), rel.array_type(), rel.tuples())
}

pub fn write_physical(rel: &PhysicalRelation<DenseArray>) -> Vec<u8> {
    let mut out = header(rel.key_arity, &rel.array_type, rel.tuple_count(), Some(rel.site_count())).into_bytes();
    for (site, k, a) in rel.triples() {
        out.extend_from_slice(&(site as u64).to_le_bytes());
        push_tuple(&mut out, k, a);
    }
    out
}

struct Header {
    key_arity: usize,
    ty: ArrayType,
    count: usize,
    sites: Option<usize>,
}

fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("relation header is not terminated by an empty line".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format(format!("missing `{MAGIC}` header line")));
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
        fields.insert(k.trim(), v.trim());
    }
    let num = |name: &str| -> Result<usize> {
        fields
            .get(name)
            .ok_or_else(|| Error::Format(format!("header lacks `{name}`")))?
            .parse()
            .map_err(|e| Error::Format(format!("header `{name}`: {e}")))
    };
    let rank = num("rank")?;
    let bound: Vec<usize> = match fields.get("bound") {
        Some(b) if !b.is_empty() => b
            .split(',')
            .map(|x| x.trim().parse().map_err(|e| Error::Format(format!("bound entry `{x}`: {e}"))))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    if bound.len() != rank {
        return Err(Error::Format(format!("rank {rank} but bound has {} entries", bound.len())));
    }
    let sites = if fields.contains_key("sites") { Some(num("sites")?) } else { None };
    let h = Header { key_arity: num("keyArity")?, ty: ArrayType::new(bound)?, count: num("count")?, sites };
    Ok((h, &bytes[end + 2..]))
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn word(&mut self) -> Result<[u8; 8]> {
        let w = self
            .body
            .get(self.pos..self.pos + 8)
            .ok_or_else(|| Error::Format("relation body is truncated".into()))?;
        self.pos += 8;
        Ok(w.try_into().expect("slice of length 8"))
    }

    fn tuple(&mut self, key_arity: usize, ty: &ArrayType) -> Result<(Key, DenseArray)> {
        let key = (0..key_arity).map(|_| self.word().map(u64::from_le_bytes)).collect::<Result<Key>>()?;
        let vals = (0..ty.len()).map(|_| self.word().map(f64::from_le_bytes)).collect::<Result<Vec<f64>>>()?;
        Ok((key, DenseArray::new(ty.clone(), vals)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last tuple", self.body.len() - self.pos)));
        }
        Ok(())
    }
}

/// Decodes tuples in file order; duplicate keys are kept.
pub fn decode_tuples(bytes: &[u8]) -> Result<(usize, ArrayType, Tuples)> {
    let (h, body) = parse_header(bytes)?;
    if h.sites.is_some() {
        return Err(Error::Format("expected a logical relation, found a physical dump".into()));
    }
    let mut r = Reader { body, pos: 0 };
    let tuples = (0..h.count).map(|_| r.tuple(h.key_arity, &h.ty)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((h.key_arity, h.ty, tuples))
}

pub fn read_relation(bytes: &[u8]) -> Result<TensorRelation> {
    let (k, ty, tuples) = decode_tuples(bytes)?;
    TensorRelation::from_tuples(k, ty, tuples)
}

pub fn read_physical(bytes: &[u8]) -> Result<PhysicalRelation<DenseArray>> {
    let (h, body) = parse_header(bytes)?;
    let sites = h.sites.ok_or_else(|| Error::Format("physical dump lacks `sites`".into()))?;
    let mut rel = PhysicalRelation::empty(h.key_arity, h.ty.clone(), sites);
    let mut r = Reader { body, pos: 0 };
    for _ in 0..h.count {
        let site = u64::from_le_bytes(r.word()?) as usize;
        let t = r.tuple(h.key_arity, &h.ty)?;
        rel.sites.get_mut(site).ok_or_else(|| Error::Format(format!("site {site} out of range")))?.push(t);
    }
    r.finish()?;
    Ok(rel)
}
