//! Binary checkpoints holding both models and the question catalog.
//!
//! Layout (little-endian): magic `AKTC`, `u32` version, `u32` entry count,
//! then per entry a `u32` name length, the UTF-8 name, `u32` rows, `u32` cols
//! and `rows * cols` `f64` values. Generator and discriminator parameters keep
//! their store names; dimensions and the catalog live under `meta.*`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::corpus::Catalog;
use crate::discriminator::{DiscriminatorDims, DiscriminatorModel};
use crate::error::{Error, Result};
use crate::generator::{GeneratorDims, GeneratorModel};
use crate::params::ParamStore;
use crate::tape::Tensor;

const MAGIC: &[u8; 4] = b"AKTC";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
}

fn row(values: Vec<f64>) -> Tensor {
    Tensor::new(1, values.len(), values)
}

fn entries(gen: &GeneratorModel, disc: &DiscriminatorModel) -> Vec<(String, Tensor)> {
    let c = &gen.catalog;
    let g = gen.dims;
    let d = disc.dims;
    let mut offsets = vec![0.0];
    let mut concepts = Vec::new();
    for q in c.questions() {
        concepts.extend(q.concept_ids.iter().map(|&x| x as f64));
        offsets.push(concepts.len() as f64);
    }
    let mut out = vec![
        (
            "meta.gen_dims".to_string(),
            row(vec![g.embed_dim as f64, g.hidden_dim as f64, g.max_len as f64]),
        ),
        (
            "meta.disc_dims".to_string(),
            row(vec![d.embed_dim as f64, d.heads as f64, d.max_len as f64]),
        ),
        (
            "meta.question_labels".to_string(),
            row(c.question_labels().iter().map(|&x| x as f64).collect()),
        ),
        (
            "meta.concept_labels".to_string(),
            row(c.concept_labels().iter().map(|&x| x as f64).collect()),
        ),
        ("meta.concept_offsets".to_string(), row(offsets)),
        ("meta.concepts".to_string(), row(concepts)),
    ];
    for p in gen.params.iter().chain(disc.params.iter()) {
        out.push((p.name.clone(), p.value.clone()));
    }
    out
}

pub fn write_to<W: Write>(mut w: W, gen: &GeneratorModel, disc: &DiscriminatorModel) -> Result<()> {
    let all = entries(gen, disc);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(all.len() as u32).to_le_bytes())?;
    for (name, t) in &all {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows as u32).to_le_bytes())?;
        w.write_all(&(t.cols as u32).to_le_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save(path: &Path, gen: &GeneratorModel, disc: &DiscriminatorModel) -> Result<()> {
    write_to(BufWriter::new(File::create(path)?), gen, disc)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_from(BufReader::new(File::open(path)?))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn take<'a>(all: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    all.iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| bad(format!("missing entry {name}")))
}

fn as_usize(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(bad(format!("{what} is not a count: {v}")))
    }
}

pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut all = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("entry name is not UTF-8"))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        all.push((name, Tensor::new(rows, cols, data)));
    }

    let gd = &take(&all, "meta.gen_dims")?.data;
    let dd = &take(&all, "meta.disc_dims")?.data;
    if gd.len() != 3 || dd.len() != 3 {
        return Err(bad("malformed dimension entries"));
    }
    let gen_dims = GeneratorDims {
        embed_dim: as_usize(gd[0], "embed_dim")?,
        hidden_dim: as_usize(gd[1], "hidden_dim")?,
        max_len: as_usize(gd[2], "max_len")?,
    };
    let disc_dims = DiscriminatorDims {
        embed_dim: as_usize(dd[0], "embed_dim")?,
        heads: as_usize(dd[1], "heads")?,
        max_len: as_usize(dd[2], "max_len")?,
    };
    let q_labels: Vec<i64> = take(&all, "meta.question_labels")?.data.iter().map(|&x| x as i64).collect();
    let c_labels: Vec<i64> = take(&all, "meta.concept_labels")?.data.iter().map(|&x| x as i64).collect();
    let offsets = take(&all, "meta.concept_offsets")?
        .data
        .iter()
        .map(|&x| as_usize(x, "concept offset"))
        .collect::<Result<Vec<_>>>()?;
    let flat = take(&all, "meta.concepts")?
        .data
        .iter()
        .map(|&x| as_usize(x, "concept id"))
        .collect::<Result<Vec<_>>>()?;
    if offsets.len() != q_labels.len() + 1 || offsets.windows(2).any(|w| w[0] > w[1]) || offsets.last() != Some(&flat.len()) {
        return Err(bad("malformed concept map"));
    }
    let concepts: Vec<Vec<usize>> = offsets.windows(2).map(|w| flat[w[0]..w[1]].to_vec()).collect();
    let catalog = Arc::new(Catalog::from_parts(q_labels, c_labels, concepts).map_err(|e| bad(e.to_string()))?);

    let mut gen_params = ParamStore::new();
    let mut disc_params = ParamStore::new();
    for (name, t) in all {
        if name.starts_with("gen.") {
            gen_params.add(name, t);
        } else if name.starts_with("disc.") {
            disc_params.add(name, t);
        } else if !name.starts_with("meta.") {
            return Err(bad(format!("unexpected entry {name}")));
        }
    }
    let n_q = catalog.n_questions();
    let n_c = catalog.n_concepts();
    Ok(Checkpoint {
        generator: GeneratorModel::from_params(catalog, gen_dims, gen_params)?,
        discriminator: DiscriminatorModel::from_params(n_q, n_c, disc_dims, disc_params)?,
    })
}
