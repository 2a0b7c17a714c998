use std::path::Path;

use kae_core::dataset::{generate_split_to, Dataset, DatasetManifest, Split, SplitCounts};
use kae_core::pde::{Grid, PdeKind, PdeSpec, DEFAULT_DT, DEFAULT_N, DEFAULT_STEPS};
use kae_core::{Error, Result};

use crate::config::Resolver;
use crate::GenDataArgs;

pub const MANIFEST: &str = "manifest.json";

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

pub fn split_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{split}.kae"))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(&dir.join(MANIFEST))?;
    m.validate()?;
    Ok(m)
}

pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split) -> Result<Dataset> {
    let ds = Dataset::load(&split_path(dir, split))?;
    ds.check_against(manifest)?;
    Ok(ds)
}

/// Validates the manifest, then simulates and writes every split into `out`.
pub fn generate_all(manifest: &DatasetManifest, out: &Path, quiet: bool) -> Result<()> {
    manifest.validate()?;
    for s in Split::ALL {
        manifest.family_counts(s)?;
    }
    create_dir(out)?;
    for s in Split::ALL {
        let ds = generate_split_to(manifest, s, &split_path(out, s))?;
        if !quiet {
            println!("{s}: {} trajectories of {} states on {} points", ds.len(), ds.steps, ds.n());
        }
    }
    manifest.save(&out.join(MANIFEST))
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut r = Resolver::new("gen-data", a.config.as_deref())?;
    let pde = r.get("pde", a.pde, PdeKind::Fisher)?;
    let d = SplitCounts::default();
    let counts = SplitCounts {
        train: r.get("train", a.train, d.train)?,
        val: r.get("val", a.val, d.val)?,
        test: r.get("test", a.test, d.test)?,
    };
    let seed = r.get("seed", a.seed, 0u64)?;
    let n = r.get("n", a.n, DEFAULT_N)?;
    let steps = r.get("steps", a.steps, DEFAULT_STEPS)?;
    let dt = r.get("dt", a.dt, DEFAULT_DT)?;
    let out = r.require_path("out", a.out)?;
    r.finish()?;

    let mut m = DatasetManifest::new(PdeSpec::default_for(pde), Grid::for_pde(pde, n)?, counts, seed);
    m.steps = steps;
    m.dt = dt;
    m.refresh();
    generate_all(&m, &out, false)?;
    r.write(&out.join("config.txt"))?;
    println!("wrote {}", out.display());
    Ok(())
}
