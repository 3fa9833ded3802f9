//! `DRFT` stream cache files.
//!
//! Layout (little-endian): magic `DRFT`, version `u32`, spec echo (`u32`
//! length + canonical JSON), `num_classes`, `rows`, `cols`, init size, chunk
//! count, one `u32` size per chunk, change-point count followed by chunk
//! indices and instance indices, then every instance (init set first) as
//! `rows*cols` pixel bytes plus a `u32` label.

use std::path::Path;

use super::idx::quantize;
use super::scenario::{ScenarioSpec, Stream};
use super::LabeledImage;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DRFT";
pub const VERSION: u32 = 1;

pub fn encode_stream(spec: &ScenarioSpec, stream: &Stream) -> Result<Vec<u8>> {
    let echo = serde_json::to_string(spec).map_err(|e| Error::Cache(e.to_string()))?;
    let (rows, cols) = stream
        .init_set
        .first()
        .map(|i| (i.rows, i.cols))
        .ok_or_else(|| Error::Cache("stream without init set".into()))?;
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put(&mut out, echo.len());
    out.extend_from_slice(echo.as_bytes());
    put(&mut out, stream.num_classes);
    put(&mut out, rows);
    put(&mut out, cols);
    put(&mut out, stream.init_set.len());
    put(&mut out, stream.chunks.len());
    for c in &stream.chunks {
        put(&mut out, c.len());
    }
    put(&mut out, stream.change_points.len());
    for (&c, &i) in stream.change_points.iter().zip(&stream.change_point_instances) {
        put(&mut out, c);
        put(&mut out, i);
    }
    for img in stream.init_set.iter().chain(stream.chunks.iter().flatten()) {
        out.extend(img.pixels.iter().map(|&p| quantize(p)));
        out.extend_from_slice(&img.label.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> Result<(ScenarioSpec, Stream)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Cache("not a DRFT file".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Cache(format!(
            "unsupported stream cache version {version}"
        )));
    }
    let echo_len = r.u32()?;
    let echo = std::str::from_utf8(r.take(echo_len)?).map_err(|e| Error::Cache(e.to_string()))?;
    let spec: ScenarioSpec = serde_json::from_str(echo).map_err(|e| Error::Cache(e.to_string()))?;
    let num_classes = r.u32()?;
    let rows = r.u32()?;
    let cols = r.u32()?;
    let init = r.u32()?;
    let nchunks = r.u32()?;
    let sizes: Vec<usize> = (0..nchunks).map(|_| r.u32()).collect::<Result<_>>()?;
    let ncp = r.u32()?;
    let mut change_points = Vec::with_capacity(ncp);
    let mut change_point_instances = Vec::with_capacity(ncp);
    for _ in 0..ncp {
        change_points.push(r.u32()?);
        change_point_instances.push(r.u32()?);
    }
    let px = rows * cols;
    let mut read_images = |n: usize| -> Result<Vec<LabeledImage>> {
        (0..n)
            .map(|_| {
                let pixels = r.take(px)?.iter().map(|&b| b as f32 / 255.0).collect();
                let label = r.u32()? as u32;
                Ok(LabeledImage {
                    rows,
                    cols,
                    pixels,
                    label,
                })
            })
            .collect()
    };
    let init_set = read_images(init)?;
    let chunks = sizes
        .iter()
        .map(|&s| read_images(s))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Cache("trailing bytes in stream cache".into()));
    }
    Ok((
        spec,
        Stream {
            init_set,
            chunks,
            change_points,
            change_point_instances,
            num_classes,
        },
    ))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Cache("truncated stream cache".into()));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn write_stream_cache(path: &Path, spec: &ScenarioSpec, stream: &Stream) -> Result<()> {
    std::fs::write(path, encode_stream(spec, stream)?)?;
    Ok(())
}

pub fn read_stream_cache(path: &Path) -> Result<(ScenarioSpec, Stream)> {
    decode_stream(&std::fs::read(path)?)
}
