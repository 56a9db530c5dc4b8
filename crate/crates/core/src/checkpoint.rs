//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EWC1"  u8 version(=1)
//! u32 header_len  header_len bytes of UTF-8 `key=value` lines
//! entries until EOF or the FISHER sentinel:
//!     u32 name_len  name  u8 rank  rank × u32 dims  numel × f64
//! optional: u32 6 "FISHER", then entries in the same layout
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::continual::{FisherDiagonal, FisherMode, FisherProvenance};
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, SegNet};
use crate::params::{EntryLayout, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EWC1";
pub const VERSION: u8 = 1;
const FISHER_SENTINEL: &str = "FISHER";

/// A saved network with optional Fisher diagonal and free-form metadata
/// (seed, regime, epoch, ...).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamStore,
    pub fisher: Option<FisherDiagonal>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(net: &SegNet) -> Self {
        Self {
            spec: net.spec().clone(),
            params: net.params().clone(),
            fisher: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn network(&self) -> Result<SegNet> {
        SegNet::from_parts(self.spec.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let header = self.header()?;
        write_u32(&mut out, header.len())?;
        out.extend_from_slice(header.as_bytes());
        for e in self.params.entries() {
            write_entry(&mut out, e.name(), e.tensor().shape(), e.tensor().data())?;
        }
        if let Some(f) = &self.fisher {
            write_str(&mut out, FISHER_SENTINEL)?;
            let mut offset = 0;
            for e in f.layout() {
                let n = e.numel();
                write_entry(&mut out, &e.name, &e.shape, &f.values()[offset..offset + n])?;
                offset += n;
            }
        }
        Ok(out)
    }

    fn header(&self) -> Result<String> {
        let mut lines = vec![
            format!("spec.in_channels={}", self.spec.in_channels),
            format!("spec.trunk={}", join(&self.spec.trunk)),
            format!(
                "spec.heads={}",
                self.spec
                    .heads
                    .iter()
                    .map(|(n, c)| format!("{n}:{c}"))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
        ];
        for (k, v) in &self.metadata {
            lines.push(format!("meta.{k}={v}"));
        }
        if let Some(f) = &self.fisher {
            let p = f.provenance();
            lines.push(format!("fisher.dataset={}", p.dataset));
            lines.push(format!("fisher.head={}", p.head));
            lines.push(format!("fisher.mode={}", p.mode));
            lines.push(format!("fisher.samples={}", p.samples));
        }
        for line in &lines {
            let (k, v) = line.split_once('=').expect("formatted as key=value");
            if k.contains('\n') || v.contains('\n') || k.is_empty() {
                return Err(Error::Contract(format!(
                    "checkpoint header line `{line}` is not a single key=value line"
                )));
            }
        }
        Ok(lines.join("\n"))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected \"EWC1\"")));
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let header_len = r.u32("header length")? as usize;
        let header_at = r.pos;
        let header = std::str::from_utf8(r.take(header_len, "header")?)
            .map_err(|e| Error::format(header_at as u64, format!("header is not UTF-8: {e}")))?;
        let fields = parse_header(header, header_at)?;

        let mut params = ParamStore::new();
        let mut fisher_entries: Option<Vec<(EntryLayout, Vec<f64>)>> = None;
        while !r.at_end() {
            let at = r.pos;
            let name = r.string("entry name")?;
            if name == FISHER_SENTINEL {
                if fisher_entries.is_some() {
                    return Err(Error::format(at as u64, "duplicate FISHER block"));
                }
                fisher_entries = Some(Vec::new());
                continue;
            }
            let (shape, data) = r.entry_body()?;
            match &mut fisher_entries {
                Some(list) => list.push((EntryLayout { name, shape }, data)),
                None => {
                    let t = Tensor::new(shape, data)
                        .map_err(|e| Error::format(at as u64, e.to_string()))?;
                    params
                        .push(name, t)
                        .map_err(|e| Error::format(at as u64, e.to_string()))?;
                }
            }
        }

        let spec = spec_from_header(&fields, header_at)?;
        let fisher = match fisher_entries {
            None => None,
            Some(list) => Some(fisher_from_parts(list, &fields, header_at)?),
        };
        let metadata = fields
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        // validates that entries match the network layout
        SegNet::from_parts(spec.clone(), params.clone())
            .map_err(|e| Error::format(header_at as u64, e.to_string()))?;
        Ok(Self {
            spec,
            params,
            fisher,
            metadata,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn write_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    write_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn write_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    write_str(out, name)?;
    let rank = u8::try_from(shape.len())
        .map_err(|_| Error::Contract(format!("rank of `{name}` exceeds 255")))?;
    out.push(rank);
    for &d in shape {
        write_u32(out, d)?;
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| Error::format(at as u64, format!("{what} is not UTF-8: {e}")))
    }

    fn entry_body(&mut self) -> Result<(Vec<usize>, Vec<f64>)> {
        let rank = self.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(self.pos as u64, "shape overflows"))?;
        let bytes = numel
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.pos as u64, "payload size overflows"))?;
        let payload = self.take(bytes, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((shape, data))
    }
}

fn parse_header(header: &str, at: usize) -> Result<BTreeMap<String, String>> {
    let mut fields = BTreeMap::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(at as u64, format!("header line `{line}` lacks `=`")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    Ok(fields)
}

fn field<'a>(fields: &'a BTreeMap<String, String>, key: &str, at: usize) -> Result<&'a str> {
    fields
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::format(at as u64, format!("header is missing `{key}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str, at: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(at as u64, format!("`{key}` has invalid value `{s}`")))
}

fn spec_from_header(fields: &BTreeMap<String, String>, at: usize) -> Result<NetworkSpec> {
    let in_channels = parse_num(field(fields, "spec.in_channels", at)?, "spec.in_channels", at)?;
    let trunk = field(fields, "spec.trunk", at)?
        .split(',')
        .map(|s| parse_num(s, "spec.trunk", at))
        .collect::<Result<Vec<usize>>>()?;
    let heads_raw = field(fields, "spec.heads", at)?;
    let mut heads = Vec::new();
    for item in heads_raw.split(',').filter(|s| !s.is_empty()) {
        let (name, classes) = item
            .split_once(':')
            .ok_or_else(|| Error::format(at as u64, format!("bad head `{item}`")))?;
        heads.push((name.to_string(), parse_num(classes, "spec.heads", at)?));
    }
    Ok(NetworkSpec {
        in_channels,
        trunk,
        heads,
    })
}

fn fisher_from_parts(
    list: Vec<(EntryLayout, Vec<f64>)>,
    fields: &BTreeMap<String, String>,
    at: usize,
) -> Result<FisherDiagonal> {
    let mode: FisherMode = field(fields, "fisher.mode", at)?
        .parse()
        .map_err(|e: Error| Error::format(at as u64, e.to_string()))?;
    let provenance = FisherProvenance {
        dataset: field(fields, "fisher.dataset", at)?.to_string(),
        head: field(fields, "fisher.head", at)?.to_string(),
        mode,
        samples: parse_num(field(fields, "fisher.samples", at)?, "fisher.samples", at)?,
    };
    let mut layout = Vec::with_capacity(list.len());
    let mut values = Vec::new();
    for (l, v) in list {
        layout.push(l);
        values.extend(v);
    }
    FisherDiagonal::new(layout, values, provenance)
        .map_err(|e| Error::format(at as u64, e.to_string()))
}
