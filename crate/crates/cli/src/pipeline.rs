//! Pipeline stages. Each stage reads its inputs from the artifact directory
//! and writes its outputs there, so any stage can be rerun on its own.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use tzpc::ident::{
    covering_radius, data_rank, learn_model_set, Dataset, ModelSet, Trajectory, RANK_TOL,
};
use tzpc::ocp::{OcpSolver, OcpSpec};
use tzpc::setalg::Zonotope;
use tzpc::simloop::{
    reach_csv, reachable_sets, run_closed_loop, Plant, RunLog, RunOptions, RunOutcome,
};
use tzpc::synth::{synthesize, SynthesisBundle, SynthesisOptions};

use crate::artifacts::{read_json, write_json, BundleFile, ModelSetFile};
use crate::config::{DeltaConfig, ScenarioConfig};
use crate::error::{CliError, CliResult};

/// Tolerance for set containment and Lyapunov margins in the offline phase.
pub const SYNTH_TOL: f64 = 1e-9;

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn trajectory(&self, i: usize) -> PathBuf {
        self.data_dir().join(format!("traj_{i:04}.csv"))
    }

    pub fn model_set(&self) -> PathBuf {
        self.root.join("modelset.json")
    }

    pub fn bundle(&self) -> PathBuf {
        self.root.join("bundle.json")
    }

    pub fn run(&self, seed: u64) -> PathBuf {
        self.root.join(format!("run_{seed}.csv"))
    }

    pub fn reach(&self, seed: u64) -> PathBuf {
        self.root.join(format!("reach_{seed}.csv"))
    }

    fn ensure(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
    }
}

/// Simulated experiments on the true plant with the data seed.
pub fn collect_data(cfg: &ScenarioConfig) -> CliResult<Vec<Trajectory>> {
    if cfg.data.traj_len < 2 {
        return Err(CliError::Check(format!(
            "rank condition: trajectories of length {} contain no transitions, \
             rank(D-) = 0 < {}",
            cfg.data.traj_len,
            cfg.n_x() + cfg.n_u()
        )));
    }
    let mut plant = Plant::new(
        cfg.a_true()?,
        cfg.b_true()?,
        cfg.noise_set()?,
        cfg.data.seed,
    )?;
    let (trajs, _) =
        plant.generate_trajectories(&cfg.zx()?, &cfg.zu()?, cfg.data.n_traj, cfg.data.traj_len)?;
    Ok(trajs)
}

/// Writes `data/traj_*.csv`, replacing any earlier trajectory files.
pub fn generate_data(cfg: &ScenarioConfig, art: &Artifacts) -> CliResult<usize> {
    let trajs = collect_data(cfg)?;
    let dir = art.data_dir();
    art.ensure(&dir)?;
    for path in trajectory_files(&dir)? {
        fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
    }
    for (i, t) in trajs.iter().enumerate() {
        let path = art.trajectory(i);
        fs::write(&path, t.to_csv()).map_err(|e| CliError::io(&path, e))?;
    }
    log::info!("wrote {} trajectories to {}", trajs.len(), dir.display());
    Ok(trajs.len())
}

fn trajectory_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("traj_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_data(art: &Artifacts) -> CliResult<Dataset> {
    let dir = art.data_dir();
    let files = if dir.is_dir() {
        trajectory_files(&dir)?
    } else {
        Vec::new()
    };
    if files.is_empty() {
        return Err(CliError::Missing(format!(
            "no trajectories in {}; run `tzpc generate-data` first",
            dir.display()
        )));
    }
    let trajs = files
        .iter()
        .map(|p| {
            Trajectory::read_csv(p).map_err(|e| CliError::Artifact {
                path: p.clone(),
                message: e.to_string(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Dataset::assemble(trajs)?)
}

/// Covering radius per the configured mode.
pub fn covering_delta(cfg: &ScenarioConfig, d: &Dataset) -> CliResult<f64> {
    Ok(match cfg.tube.delta {
        DeltaConfig::Zero => 0.0,
        DeltaConfig::Value { value } => value,
        DeltaConfig::Grid { points } => covering_radius(d, &cfg.zx()?, &cfg.zu()?, points)?,
    })
}

/// Learns `M_D` from the stored trajectories and writes `modelset.json`.
pub fn learn(cfg: &ScenarioConfig, art: &Artifacts) -> CliResult<ModelSetFile> {
    let d = load_data(art)?;
    let ms = learn_model_set(&d, &cfg.noise_set()?)?;
    let delta = covering_delta(cfg, &d)?;
    let file = ModelSetFile::new(&ms, d.num_columns(), data_rank(&d, RANK_TOL), delta);
    write_json(&art.model_set(), &file)?;
    log::info!(
        "model set with {} generators, Frobenius bound {:.4e}, delta {:.4e}",
        ms.m_d.num_generators(),
        ms.fro_norm,
        delta
    );
    Ok(file)
}

pub fn load_model(art: &Artifacts) -> CliResult<(ModelSet, f64)> {
    let path = art.model_set();
    let file: ModelSetFile = read_json(&path, "learn")?;
    let ms = file
        .model_set()
        .map_err(|message| CliError::Artifact { path, message })?;
    Ok((ms, file.delta))
}

pub fn synthesis_options(cfg: &ScenarioConfig, delta: f64) -> CliResult<SynthesisOptions> {
    let (x_s, u_s) = cfg.setpoint()?;
    Ok(SynthesisOptions {
        z_w: cfg.noise_set()?,
        delta,
        nominal: cfg.nominal()?,
        gains: cfg.gain_choice()?,
        theta: cfg.tube.theta,
        kappa_max: cfg.tube.kappa_max,
        symmetrize_zm: cfg.tube.symmetrize_zm,
        x_set: cfg.state_set()?,
        u_set: cfg.input_set()?,
        x_s,
        u_s,
        project_setpoint: cfg.cost.project_setpoint,
        alpha: cfg.alpha()?,
        tol: SYNTH_TOL,
    })
}

/// Offline phase from the stored data and model set; writes `bundle.json`.
pub fn offline(cfg: &ScenarioConfig, art: &Artifacts) -> CliResult<SynthesisBundle> {
    let d = load_data(art)?;
    let (ms, delta) = load_model(art)?;
    let bundle = synthesize(&d, &ms, &synthesis_options(cfg, delta)?)?;
    write_json(&art.bundle(), &BundleFile::new(&bundle))?;
    log::info!(
        "tube kappa = {}, terminal level {:.6e}",
        bundle.kappa,
        bundle.terminal.level()
    );
    Ok(bundle)
}

pub fn load_bundle(art: &Artifacts) -> CliResult<SynthesisBundle> {
    let path = art.bundle();
    let file: BundleFile = read_json(&path, "offline")?;
    file.bundle()
        .map_err(|message| CliError::Artifact { path, message })
}

pub fn ocp_spec(cfg: &ScenarioConfig, bundle: &SynthesisBundle) -> CliResult<OcpSpec> {
    Ok(OcpSpec::from_bundle(
        bundle,
        cfg.horizon,
        &cfg.stage_cost()?,
        cfg.terminal_mode(),
    )?)
}

/// One closed-loop run with plant noise seeded by `seed`.
pub fn run_seed(
    cfg: &ScenarioConfig,
    bundle: &SynthesisBundle,
    spec: &OcpSpec,
    seed: u64,
    opts: RunOptions,
) -> CliResult<RunLog> {
    let mut plant = Plant::new(cfg.a_true()?, cfg.b_true()?, cfg.noise_set()?, seed)?;
    let mut solver = OcpSolver::new(spec.clone(), cfg.qp_settings());
    Ok(run_closed_loop(
        &mut plant,
        bundle,
        &mut solver,
        &cfg.x0()?,
        opts,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub steps: usize,
    pub outcome: RunOutcome,
    pub min_slack_x: f64,
    pub min_slack_u: f64,
    pub max_tube_distance: f64,
    pub max_solve_ms: Option<f64>,
}

impl RunSummary {
    pub fn new(seed: u64, log: &RunLog) -> Self {
        let fold_min = |f: fn(&tzpc::simloop::StepRecord) -> f64| {
            log.records.iter().map(f).fold(f64::INFINITY, f64::min)
        };
        Self {
            seed,
            steps: log.records.len(),
            outcome: log.outcome.clone(),
            min_slack_x: fold_min(|r| r.slack_x),
            min_slack_u: fold_min(|r| r.slack_u),
            max_tube_distance: log
                .records
                .iter()
                .map(|r| r.tube_distance)
                .fold(0.0, f64::max),
            max_solve_ms: log
                .records
                .iter()
                .filter_map(|r| r.solve_ms)
                .reduce(f64::max),
        }
    }

    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }
}

/// Runs every seed in parallel from `bundle.json` and writes
/// `run_<seed>.csv`. Aborted runs are written up to the failing step.
pub fn simulate(
    cfg: &ScenarioConfig,
    art: &Artifacts,
    seeds: &[u64],
    opts: RunOptions,
) -> CliResult<Vec<RunSummary>> {
    let bundle = load_bundle(art)?;
    let spec = ocp_spec(cfg, &bundle)?;
    let logs = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &bundle, &spec, seed, opts))
        .collect::<CliResult<Vec<_>>>()?;
    art.ensure(art.root())?;
    let (nx, nu) = (cfg.n_x(), cfg.n_u());
    let mut summaries = Vec::with_capacity(seeds.len());
    for (&seed, log) in seeds.iter().zip(&logs) {
        let path = art.run(seed);
        fs::write(&path, log.to_csv(nx, nu)).map_err(|e| CliError::io(&path, e))?;
        summaries.push(RunSummary::new(seed, log));
    }
    Ok(summaries)
}

/// Logged states and inputs of one run.
pub type StateInputSeries = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// `(x(t), u(t))` pairs from a run CSV.
pub fn read_run_csv(path: &Path, n_x: usize, n_u: usize) -> CliResult<StateInputSeries> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::Missing(format!(
                "{} not found; run `tzpc simulate` first",
                path.display()
            )))
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    let bad = |message: String| CliError::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .collect();
    let column = |name: String| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let xi = (1..=n_x)
        .map(|i| column(format!("x{i}")))
        .collect::<CliResult<Vec<_>>>()?;
    let ui = (1..=n_u)
        .map(|i| column(format!("u{i}")))
        .collect::<CliResult<Vec<_>>>()?;
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> CliResult<f64> {
            fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad(format!("bad value in row {}", ln + 1)))
        };
        states.push(DVector::from_iterator(
            n_x,
            xi.iter().map(|&i| get(i)).collect::<CliResult<Vec<_>>>()?,
        ));
        inputs.push(DVector::from_iterator(
            n_u,
            ui.iter().map(|&i| get(i)).collect::<CliResult<Vec<_>>>()?,
        ));
    }
    Ok((states, inputs))
}

/// Writes `reach_<seed>.csv` with the interval hulls of
/// `M_D [x(t); u(t)] ⊕ Z_w` for every logged step.
pub fn reach(cfg: &ScenarioConfig, art: &Artifacts, seeds: &[u64]) -> CliResult<()> {
    let (ms, _) = load_model(art)?;
    let zw: Zonotope = cfg.noise_set()?;
    for &seed in seeds {
        let (states, inputs) = read_run_csv(&art.run(seed), cfg.n_x(), cfg.n_u())?;
        let sets = reachable_sets(&ms, &states, &inputs, &zw)?;
        let path = art.reach(seed);
        fs::write(&path, reach_csv(&sets)).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn artifact_paths() {
        let art = Artifacts::new("out");
        assert_eq!(art.trajectory(7), Path::new("out/data/traj_0007.csv"));
        assert_eq!(art.run(12), Path::new("out/run_12.csv"));
        assert_eq!(art.reach(3), Path::new("out/reach_3.csv"));
        assert_eq!(art.bundle(), Path::new("out/bundle.json"));
        assert_eq!(art.model_set(), Path::new("out/modelset.json"));
    }

    #[test]
    fn run_csv_columns_are_found_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run_1.csv");
        fs::write(
            &path,
            "t,x1,x2,xbar1,xbar2,u1,ubar1,j_star\n\
             0,1.5,-2,0,0,0.25,0,3\n\
             1,1e-3,4,0,0,-1,0,2\n",
        )
        .unwrap();
        let (xs, us) = read_run_csv(&path, 2, 1).unwrap();
        assert_eq!(xs, vec![dvector![1.5, -2.0], dvector![1e-3, 4.0]]);
        assert_eq!(us, vec![dvector![0.25], dvector![-1.0]]);
    }

    #[test]
    fn run_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run_1.csv");
        assert_eq!(read_run_csv(&path, 2, 1).unwrap_err().exit_code(), 3);
        fs::write(&path, "t,x1,u1\n0,1,2\n").unwrap();
        assert!(matches!(
            read_run_csv(&path, 2, 1),
            Err(CliError::Artifact { .. })
        ));
        fs::write(&path, "t,x1,x2,u1\n0,1,oops,2\n").unwrap();
        assert!(matches!(
            read_run_csv(&path, 2, 1),
            Err(CliError::Artifact { .. })
        ));
    }

    #[test]
    fn missing_data_directory_is_a_missing_prerequisite() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_data(&Artifacts::new(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
