use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hydra_core::data::{generate, read_dataset, write_dataset, Dataset, Sample, Split, TaskSpec};
use hydra_core::fusion::{cost_report, fuse as fuse_models, HydraModel};
use hydra_core::io::{self, Artifact};
use hydra_core::metrics::{head_geometry, EvalReport, PredictionSet, DEFAULT_RIDGE_SCALE};
use hydra_core::pruning::{
    calibration_subset, extract_circuit as extract, make_members, taylor_scores, CircuitOptions,
    Member, MemberData, MemberOptions, PruneBudget, ScoreKind, ScoreReport, Strategy,
    DEFAULT_CALIB_BATCH,
};
use hydra_core::transformer::{train_steps, Jitter, TrainConfig};
use hydra_core::verify::run_suites;
use hydra_core::{HeadMask, Model, Scalar, TransformerConfig};

use crate::{
    BenchArgs, BudgetArgs, EvalArgs, ExtractArgs, FuseArgs, GenDataArgs, Precision, PruneArgs,
    ScoreArg, ScoreHeadsArgs, StrategyArg, TrainArgs, VerifyArgs,
};

#[derive(Debug)]
pub enum CliError {
    Core(hydra_core::Error),
    Usage(String),
    Io { path: PathBuf, err: std::io::Error },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "cli: {m}"),
            CliError::Io { path, err } => write!(f, "io: {}: {err}", path.display()),
        }
    }
}

impl From<hydra_core::Error> for CliError {
    fn from(e: hydra_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Caps the global thread pool at `HYDRA_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("HYDRA_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        usage(format!(
            "HYDRA_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|err| CliError::Io {
        path: path.to_path_buf(),
        err,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|err| CliError::Io {
        path: path.to_path_buf(),
        err,
    })
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|err| CliError::Io {
        path: dir.to_path_buf(),
        err,
    })
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("input {} does not exist", path.display())))
    }
}

struct TaskData {
    spec: TaskSpec,
    dir: PathBuf,
}

impl TaskData {
    fn open(dir: &Path) -> Result<Self> {
        require(dir)?;
        let path = dir.join("task.json");
        let spec: TaskSpec = serde_json::from_str(&read(&path)?)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(Self {
            spec,
            dir: dir.to_path_buf(),
        })
    }

    fn split(&self, split: Split) -> Result<Dataset> {
        Ok(read_dataset(&read(
            &self.dir.join(format!("{split}.txt")),
        )?)?)
    }

    /// `n` held-out samples drawn from the same stream as `split`, following
    /// the samples stored on disk so they never overlap evaluation data.
    fn validation(&self, split: Split, n: usize) -> Result<Vec<Sample>> {
        let stored = self.split(split)?.samples.len();
        let mut d = generate(&self.spec, stored + n, split)?;
        Ok(d.samples.split_off(stored))
    }

    /// Embedding noise used with the noisy split.
    fn jitter(&self) -> Jitter {
        Jitter {
            seed: self.spec.seed,
            std: self.spec.noise.embed_std,
        }
    }

    fn model_config(&self, base: &TransformerConfig) -> TransformerConfig {
        TransformerConfig {
            seq_len: self.spec.seq_len,
            vocab: self.spec.vocab(),
            classes: self.spec.classes,
            ..*base
        }
    }
}

fn budget(b: &BudgetArgs, cfg: &TransformerConfig) -> Result<PruneBudget> {
    let budget = match (b.budget_per_layer, b.budget_global) {
        (Some(r), None) => PruneBudget::uniform(cfg, r),
        (None, Some(g)) => PruneBudget::Global(g),
        _ => {
            return Err(usage(
                "give exactly one of --budget-per-layer and --budget-global",
            ))
        }
    };
    budget.validate(cfg)?;
    Ok(budget)
}

fn score_kind(s: ScoreArg) -> ScoreKind {
    match s {
        ScoreArg::Acc => ScoreKind::Acc,
        ScoreArg::Ood => ScoreKind::Ood,
        ScoreArg::Avg => ScoreKind::Avg,
    }
}

fn load_model(path: &Path) -> Result<Model<f64>> {
    require(path)?;
    Ok(io::load_model(path)?)
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut spec = TaskSpec::with_seed(a.task_seed);
    if let Some(c) = a.classes {
        spec.classes = c;
    }
    if let Some(t) = a.seq_len {
        spec.seq_len = t;
    }
    spec.validate()?;
    out_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&spec).map_err(|e| usage(e.to_string()))?;
    write(&a.out.join("task.json"), json + "\n")?;
    for (split, n) in [
        (Split::Train, a.train_size),
        (Split::Test, a.test_size),
        (Split::Noisy, a.test_size),
        (Split::Ood, a.ood_size),
    ] {
        let d = generate(&spec, n, split)?;
        write(&a.out.join(format!("{split}.txt")), write_dataset(&d))?;
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let task = TaskData::open(&a.data)?;
    let base = TransformerConfig {
        layers: a.layers,
        hidden: a.hidden,
        heads: a.heads,
        ff: a.ff,
        ..TransformerConfig::default()
    };
    let cfg = task.model_config(&base);
    let train = task.split(Split::Train)?;
    let model = Model::<f64>::init(cfg, a.model_seed)?;
    let tc = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        seed: a.model_seed,
    };
    let (model, losses) = train_steps(model, &train.samples, &HeadMask::for_config(&cfg), &tc)?;
    out_dir(&a.out)?;
    io::save_model(&model, a.out.join("model.bin"))?;
    let mut log = String::from("step\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{i}\t{l}\n"));
    }
    write(&a.out.join("train_log.txt"), log)
}

pub fn score_heads(a: &ScoreHeadsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let task = TaskData::open(&a.data)?;
    let seed = a.seeds[0];
    let calib = calibration_subset(&task.split(Split::Train)?.samples, a.calib_size, seed);
    let mask = HeadMask::for_config(&model.config);
    let scores = taylor_scores(&model, &mask, &calib, DEFAULT_CALIB_BATCH)?;
    out_dir(&a.out)?;
    write(
        &a.out.join("scores.txt"),
        ScoreReport { seed, scores }.to_text(),
    )
}

pub fn extract_circuit(a: &ExtractArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let task = TaskData::open(&a.data)?;
    let budget = budget(&a.budget, &model.config)?;
    let id = task.validation(Split::Test, a.val_size)?;
    let ood = task.validation(Split::Ood, a.val_size)?;
    let ranking = extract(
        &model,
        &budget,
        score_kind(a.score),
        &id,
        &ood,
        a.seeds[0],
        &CircuitOptions::default(),
    )?;
    out_dir(&a.out)?;
    write(&a.out.join("ranking.txt"), ranking.to_text())
}

fn member_seeds(members: usize, seeds: &[u64]) -> Result<Vec<u64>> {
    if members == 0 {
        return Err(usage("--members must be >= 1"));
    }
    match seeds.len() {
        0 if members == 1 => Ok(vec![0]),
        n if n == members => Ok(seeds.to_vec()),
        n => Err(usage(format!(
            "--members {members} needs {members} seeds, got {n}"
        ))),
    }
}

pub fn prune(a: &PruneArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let task = TaskData::open(&a.data)?;
    let seeds = member_seeds(a.members, &a.seeds)?;
    let budget = budget(&a.budget, &model.config)?;
    let train = task.split(Split::Train)?;
    let id = task.validation(Split::Test, a.val_size)?;
    let ood = task.validation(Split::Ood, a.val_size)?;
    let strategy = match a.strategy {
        StrategyArg::Taylor => Strategy::Taylor,
        StrategyArg::Circuit => Strategy::Circuit,
    };
    let opts = MemberOptions {
        score: score_kind(a.score),
        calib_size: a.calib_size,
        finetune: (a.finetune_steps > 0).then(|| TrainConfig {
            steps: a.finetune_steps,
            ..TrainConfig::default()
        }),
        ..MemberOptions::default()
    };
    let data = MemberData {
        train: &train.samples,
        id_val: &id,
        ood_val: &ood,
    };
    let members = make_members(&model, strategy, &seeds, &budget, data, &opts)?;
    out_dir(&a.out)?;
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut listing = format!(
        "# strategy={} score={} seeds={}\n",
        strategy,
        score_kind(a.score),
        seed_list.join(",")
    );
    for (m, member) in members.iter().enumerate() {
        listing.push_str(&format!("{}\n", member.mask));
        if opts.finetune.is_some() {
            io::save_model(&member.model, a.out.join(format!("member{m}.bin")))?;
        }
    }
    write(&a.out.join("members.txt"), listing)
}

fn read_members(dir: &Path, base: &Model<f64>) -> Result<Vec<Member<f64>>> {
    require(dir)?;
    let text = read(&dir.join("members.txt"))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .enumerate()
        .map(|(m, line)| {
            let mask: HeadMask = line.parse()?;
            mask.validate(&base.config)?;
            let path = dir.join(format!("member{m}.bin"));
            let model = if path.exists() {
                io::load_model(&path)?
            } else {
                base.clone()
            };
            Ok(Member { mask, model })
        })
        .collect()
}

pub fn fuse(a: &FuseArgs) -> Result<()> {
    let base = load_model(&a.model)?;
    let members = match &a.prune_dir {
        Some(dir) => read_members(dir, &base)?,
        None => {
            if a.members == 0 {
                return Err(usage("--members must be >= 1"));
            }
            let mask = HeadMask::for_config(&base.config);
            vec![
                Member {
                    mask,
                    model: base.clone()
                };
                a.members
            ]
        }
    };
    let hydra = fuse_models(&base, &members)?;
    out_dir(&a.out)?;
    Ok(io::save_hydra(&hydra, a.out.join("hydra.bin"))?)
}

enum Loaded<S> {
    Model(Model<S>),
    Hydra(HydraModel<S>),
}

impl<S: Scalar> Loaded<S> {
    fn open(path: &Path) -> Result<Self> {
        require(path)?;
        Ok(match io::load::<S>(path)? {
            Artifact::Model(m) => Loaded::Model(m),
            Artifact::Hydra(h) => Loaded::Hydra(h),
        })
    }

    fn config(&self) -> &TransformerConfig {
        match self {
            Loaded::Model(m) => &m.config,
            Loaded::Hydra(h) => &h.config,
        }
    }

    fn masks(&self) -> Vec<HeadMask> {
        match self {
            Loaded::Model(m) => vec![HeadMask::for_config(&m.config)],
            Loaded::Hydra(h) => h.masks.clone(),
        }
    }

    fn predict(&self, samples: &[Sample], jitter: Option<Jitter>) -> Result<Vec<Vec<f64>>> {
        let probs = match self {
            Loaded::Model(m) => {
                m.predict_with(samples, &HeadMask::for_config(&m.config), jitter)?
            }
            Loaded::Hydra(h) => h.predict_with(samples, jitter)?,
        };
        // Reduced-precision rows are renormalized after widening.
        let exact = S::NAME == "f64";
        Ok(probs
            .into_iter()
            .map(|p| {
                let p: Vec<f64> = p.into_iter().map(|x| x.to_f64_lossy()).collect();
                if exact {
                    return p;
                }
                let z: f64 = p.iter().sum();
                p.into_iter().map(|x| x / z).collect()
            })
            .collect())
    }
}

fn eval_as<S: Scalar>(a: &EvalArgs) -> Result<()> {
    let task = TaskData::open(&a.data)?;
    let split: Split = a.id_split.parse()?;
    let jitter = match split {
        Split::Test => None,
        Split::Noisy => Some(task.jitter()),
        other => {
            return Err(usage(format!(
                "--id-split must be test or noisy, got {other}"
            )))
        }
    };
    let model = Loaded::<S>::open(&a.model)?;
    let id = task.split(split)?;
    let ood = task.split(Split::Ood)?;
    let id_probs = model.predict(&id.samples, jitter)?;
    let ood_probs = model.predict(&ood.samples, None)?;
    let set = PredictionSet::new(id_probs, id.labels()?)?;
    let report = EvalReport::compute(&set, &ood_probs, a.bins)?;
    out_dir(&a.out)?;
    write(&a.out.join("eval.txt"), report.to_text())?;
    write(&a.out.join("eval.json"), report.to_json() + "\n")?;
    if let Some(layer) = a.geometry_layer {
        let (base, mask) = match &model {
            Loaded::Model(m) => (m.clone(), HeadMask::for_config(&m.config)),
            Loaded::Hydra(_) => return Err(usage("--geometry-layer needs an unfused model")),
        };
        let geo = head_geometry(
            &base,
            &mask,
            &id.samples,
            &ood.samples,
            layer,
            DEFAULT_RIDGE_SCALE,
        )?;
        write(&a.out.join("geometry.txt"), geo.to_text())?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    match a.precision {
        Precision::Verify => eval_as::<f64>(a),
        Precision::Bench => eval_as::<f32>(a),
    }
}

fn bench_as<S: Scalar>(a: &BenchArgs) -> Result<()> {
    let model = Loaded::<S>::open(&a.model)?;
    let report = cost_report(model.config(), &model.masks())?;
    out_dir(&a.out)?;
    write(&a.out.join("cost.txt"), report.to_text())?;
    println!("{}", report.to_text().trim_end());
    if let Some(dir) = &a.data {
        let task = TaskData::open(dir)?;
        let samples = task.split(Split::Test)?.samples;
        let start = Instant::now();
        model.predict(&samples, None)?;
        let secs = start.elapsed().as_secs_f64();
        println!(
            "throughput\t{:.1} samples/s\t({} samples, {} scalars)",
            samples.len() as f64 / secs,
            samples.len(),
            S::NAME
        );
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    match a.precision {
        Precision::Verify => bench_as::<f64>(a),
        Precision::Bench => bench_as::<f32>(a),
    }
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    let mut lines = Vec::new();
    let mut failed = 0;
    for &seed in &a.seeds {
        for outcome in run_suites(&a.suites, seed)? {
            let line = format!("seed={seed} {}", outcome.line());
            println!("{line}");
            failed += usize::from(!outcome.passed);
            lines.push(line);
        }
    }
    if lines.is_empty() {
        return Err(usage(format!("no suite matches {:?}", a.suites)));
    }
    if let Some(out) = &a.out {
        out_dir(out)?;
        write(&out.join("verify.txt"), lines.join("\n") + "\n")?;
    }
    if failed > 0 {
        return Err(usage(format!("{failed} verification suite(s) failed")));
    }
    Ok(())
}
