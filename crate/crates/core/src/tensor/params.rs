use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::tape::Tape;
use super::Tensor;
use crate::error::{Error, Result};

/// First line of every parameter checkpoint.
pub const CHECKPOINT_MAGIC: &str = "kgreport-params v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable arrays plus their accumulated gradients. Modules hold
/// [`ParamId`]s; two modules holding the same id share storage.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let shape = shape.into();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>) -> Result<ParamId> {
        self.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>) -> Result<ParamId> {
        self.register(name, Tensor::full(shape, 1.0))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Adds the gradients recorded on `tape` into this store.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (id, g) in tape.param_grads() {
            self.grads[id.0]
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b);
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor, &Tensor) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    /// Copies values from `other` by name. Every parameter here must be present
    /// there with the same shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks parameter {name}")))?;
            let src = other.value(src);
            if src.shape() != self.values[i].shape() {
                return Err(Error::dim("load_values_from", self.values[i].shape(), src.shape()));
            }
            self.values[i] = src.clone();
        }
        Ok(())
    }
}

/// Writes the text checkpoint format:
///
/// ```text
/// kgreport-params v1
/// <count>
/// <name> <rank> <dim>...
/// <value> <value> ...
/// ```
///
/// one header line and one value line per parameter. Values use Rust's
/// shortest round-trip float formatting, so a save/load cycle is exact.
pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "{}", store.len()).unwrap();
    for id in store.ids() {
        let v = store.value(id);
        write!(out, "{} {}", store.name(id), v.shape().len()).unwrap();
        for d in v.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let mut first = true;
        for x in v.data() {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

fn parse_checkpoint(text: &str, origin: &str) -> Result<ParamStore> {
    let bad = |line: usize, detail: &str| Error::Parse {
        what: "checkpoint",
        location: format!("{origin}:{line}"),
        detail: detail.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
        _ => return Err(bad(1, "missing version header")),
    }
    let (ln, count) = lines.next().ok_or_else(|| bad(2, "missing count"))?;
    let count: usize = count.trim().parse().map_err(|_| bad(ln + 1, "bad count"))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let (ln, header) = lines.next().ok_or_else(|| bad(0, "truncated file"))?;
        let mut fields = header.split_whitespace();
        let name = fields.next().ok_or_else(|| bad(ln + 1, "empty header"))?;
        let rank: usize = fields
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| bad(ln + 1, "bad rank"))?;
        let shape: Vec<usize> = fields
            .map(|d| d.parse().map_err(|_| bad(ln + 1, "bad dimension")))
            .collect::<Result<_>>()?;
        if shape.len() != rank {
            return Err(bad(ln + 1, "rank does not match dimension count"));
        }
        let (ln, values) = lines.next().ok_or_else(|| bad(0, "truncated file"))?;
        let data: Vec<f64> = values
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(ln + 1, "bad value")))
            .collect::<Result<_>>()?;
        let t = Tensor::new(shape, data).map_err(|_| bad(ln + 1, "value count does not match shape"))?;
        store.register(name, t)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let id = store.uniform("w", [16, 8], 16, &mut rng).unwrap();
        assert!(store.value(id).data().iter().all(|x| x.abs() < 0.25));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.zeros("a", [2]).unwrap();
        assert!(matches!(store.zeros("a", [3]), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store.uniform("layer.w", [3, 4], 3, &mut rng).unwrap();
        store.register("tau", Tensor::scalar(0.07)).unwrap();
        store.register("v", Tensor::vector(vec![1e-300, -2.5e10, 1.0 / 3.0])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&store, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.names(), store.names());
        for id in store.ids() {
            assert_eq!(back.value(id), store.value(id));
        }
    }

    #[test]
    fn checkpoint_rejects_wrong_version_and_truncation() {
        assert!(parse_checkpoint("kgreport-params v0\n0\n", "x").is_err());
        assert!(parse_checkpoint("kgreport-params v1\n1\nw 1 3\n1 2\n", "x").is_err());
        assert!(parse_checkpoint("kgreport-params v1\n2\nw 1 1\n1\n", "x").is_err());
    }
}
