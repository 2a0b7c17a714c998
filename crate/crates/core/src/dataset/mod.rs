//! Train/validation/test splits, the `KAE1` container and batching.

mod format;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use format::{from_bytes, to_bytes, FORMAT_VERSION, MAGIC};
pub(crate) use format::{write_atomic, Reader};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pde::{Grid, IcFamily, IcRanges, PdeKind, PdeSpec, Trajectory, DEFAULT_DT, DEFAULT_N, DEFAULT_STEPS};

pub const DEFAULT_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Families present in the split, in interleaving order.
    pub fn families(self) -> &'static [IcFamily] {
        match self {
            Split::Train | Split::Val => &IcFamily::TRAINING,
            Split::Test => &IcFamily::ALL,
        }
    }

    /// Keeps the seed streams of different splits disjoint.
    fn seed_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 32,
            Split::Test => 2 << 32,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Desk-scale split sizes, rounded up so the three training families divide evenly.
impl Default for SplitCounts {
    fn default() -> Self {
        Self { train: 2001, val: 501, test: 700 }
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub pde: PdeSpec,
    pub grid: Grid,
    pub steps: usize,
    pub dt: f64,
    pub counts: SplitCounts,
    pub base_seed: u64,
    #[serde(default)]
    pub ic_ranges: IcRanges,
    pub format_version: u32,
    /// Derived from `counts`; written for readers, ignored on load.
    #[serde(default, skip_deserializing)]
    pub per_family: BTreeMap<Split, BTreeMap<IcFamily, usize>>,
}

impl DatasetManifest {
    pub fn new(pde: PdeSpec, grid: Grid, counts: SplitCounts, base_seed: u64) -> Self {
        let mut m = Self {
            pde,
            grid,
            steps: DEFAULT_STEPS,
            dt: DEFAULT_DT,
            counts,
            base_seed,
            ic_ranges: IcRanges::default(),
            format_version: FORMAT_VERSION,
            per_family: BTreeMap::new(),
        };
        m.refresh();
        m
    }

    pub fn default_for(kind: PdeKind) -> Result<Self> {
        Ok(Self::new(PdeSpec::default_for(kind), Grid::for_pde(kind, DEFAULT_N)?, SplitCounts::default(), 0))
    }

    /// Recomputes `per_family` after `counts` changed. Indivisible splits are left out.
    pub fn refresh(&mut self) {
        self.per_family = Split::ALL
            .into_iter()
            .filter_map(|s| self.family_counts(s).ok().map(|fc| (s, fc.into_iter().collect())))
            .collect();
    }

    pub fn family_counts(&self, split: Split) -> Result<Vec<(IcFamily, usize)>> {
        let fams = split.families();
        let count = self.counts.get(split);
        if !count.is_multiple_of(fams.len()) {
            return Err(Error::Config(format!(
                "{split} count {count} is not divisible by its {} families",
                fams.len()
            )));
        }
        Ok(fams.iter().map(|&f| (f, count / fams.len())).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.pde.validate()?;
        if self.pde.kind() != PdeKind::Ks && self.grid.x_max <= self.grid.x_min {
            return Err(Error::Config("empty spatial domain".into()));
        }
        if self.steps < 2 {
            return Err(Error::Config(format!("need at least 2 timesteps, got {}", self.steps)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported format version {}", self.format_version)));
        }
        Ok(())
    }

    /// Seed of trajectory `index` in `split`.
    pub fn seed(&self, split: Split, index: usize) -> u64 {
        self.base_seed.wrapping_add(split.seed_offset()).wrapping_add(index as u64)
    }

    pub fn to_json(&self) -> String {
        let mut m = self.clone();
        m.refresh();
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.refresh();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// An immutable set of trajectories sharing one grid and time axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pde: PdeKind,
    pub grid: Grid,
    pub steps: usize,
    pub dt: f64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn empty(pde: PdeKind, grid: Grid, steps: usize, dt: f64) -> Self {
        Self { pde, grid, steps, dt, trajectories: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn family_counts(&self) -> BTreeMap<IcFamily, usize> {
        let mut out = BTreeMap::new();
        for t in &self.trajectories {
            *out.entry(t.ic_kind).or_insert(0) += 1;
        }
        out
    }

    /// Keeps only the trajectories of `family`.
    pub fn filter_family(&self, family: IcFamily) -> Self {
        Self {
            trajectories: self.trajectories.iter().filter(|t| t.ic_kind == family).cloned().collect(),
            ..self.clone()
        }
    }

    /// First `count` trajectories (or all of them).
    pub fn take(&self, count: usize) -> Self {
        Self { trajectories: self.trajectories.iter().take(count).cloned().collect(), ..self.clone() }
    }

    /// Stacks the selected trajectories into `[b × T × n]`.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.steps * self.grid.n;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let t = self
                .trajectories
                .get(i)
                .ok_or_else(|| Error::Parameter(format!("trajectory index {i} out of range (len {})", self.len())))?;
            data.extend_from_slice(t.states.data());
        }
        if indices.is_empty() {
            return Err(Error::Parameter("cannot stack zero trajectories".into()));
        }
        Tensor::new(vec![indices.len(), self.steps, self.grid.n], data)
    }

    /// Shuffled batches for `epoch`; see [`batch_indices`].
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIterator<'_>> {
        Ok(BatchIterator { dataset: self, order: batch_indices(self.len(), batch_size, seed, epoch)?, next: 0 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &to_bytes(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        from_bytes(&bytes)
    }

    /// Checks that the stored header agrees with `manifest`.
    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.pde != manifest.pde.kind()
            || self.grid != manifest.grid
            || self.steps != manifest.steps
            || self.dt != manifest.dt
        {
            return Err(Error::Config(format!(
                "dataset ({} n={} T={} dt={}) does not match manifest ({} n={} T={} dt={})",
                self.pde,
                self.grid.n,
                self.steps,
                self.dt,
                manifest.pde.kind(),
                manifest.grid.n,
                manifest.steps,
                manifest.dt
            )));
        }
        Ok(())
    }
}

/// Simulates one split. Trajectory `i` uses family `families[i % F]` and
/// seed `manifest.seed(split, i)`, so the result does not depend on thread count.
pub fn generate_split(manifest: &DatasetManifest, split: Split) -> Result<Dataset> {
    manifest.validate()?;
    manifest.family_counts(split)?;
    let fams = split.families();
    let count = manifest.counts.get(split);
    let trajectories = (0..count)
        .into_par_iter()
        .map(|i| {
            Trajectory::generate(
                &manifest.pde,
                &manifest.grid,
                fams[i % fams.len()],
                manifest.seed(split, i),
                &manifest.ic_ranges,
                manifest.steps,
                manifest.dt,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { pde: manifest.pde.kind(), grid: manifest.grid, steps: manifest.steps, dt: manifest.dt, trajectories })
}

/// Generates `split` and writes it to `path`.
pub fn generate_split_to(manifest: &DatasetManifest, split: Split, path: &Path) -> Result<Dataset> {
    let ds = generate_split(manifest, split)?;
    ds.save(path)?;
    Ok(ds)
}

/// A shuffled partition of `0..len` into chunks of `batch_size`; the last
/// chunk is short when `batch_size` does not divide `len`. The order depends
/// only on `(seed, epoch)`.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    order: Vec<Vec<usize>>,
    next: usize,
}

impl BatchIterator<'_> {
    pub fn indices(&self) -> &[Vec<usize>] {
        &self.order
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        let idx = self.order.get(self.next)?;
        self.next += 1;
        Some(self.dataset.stack(idx).expect("batch indices are in range"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.order.len() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIterator<'_> {}

/// One row per timestep, `n` columns, 17 significant digits.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    for k in 0..traj.steps() {
        let row: Vec<String> = traj.states.row(k).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!(matches!("dev".parse::<Split>(), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_are_disjoint_across_splits() {
        let m = DatasetManifest::default_for(PdeKind::Fisher).unwrap();
        assert_ne!(m.seed(Split::Train, 0), m.seed(Split::Val, 0));
        assert_ne!(m.seed(Split::Val, 5), m.seed(Split::Test, 5));
    }

    #[test]
    fn manifest_json_lists_family_counts() {
        let m = DatasetManifest::default_for(PdeKind::Fisher).unwrap();
        let back = DatasetManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.per_family[&Split::Test][&IcFamily::Pulse], 100);
        assert_eq!(m.per_family[&Split::Train].len(), 3);
    }

    #[test]
    fn batch_zero_is_rejected() {
        assert!(batch_indices(4, 0, 0, 0).is_err());
    }
}
