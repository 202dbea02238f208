use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bicap_core::checkpoint;
use bicap_core::data::{
    assemble_examples, augment_plan_with_scales, make_toy_dataset, read_captions, read_features, tokenize,
    write_features, CaptionedExample, CropSize, FeatureTable, Vocabulary, DEFAULT_BASE, DEFAULT_MIN_COUNT, SCALES,
};
use bicap_core::eval::{corpus_bleu, metric_rows_text, retrieval_report, ScoreMatrix, MAX_BLEU_ORDER};
use bicap_core::infer::{caption_image, dump_gate_trace, DEFAULT_MAX_LEN};
use bicap_core::model::{ArchitectureKind, CaptionModel, Direction, ModelDims};
use bicap_core::numcore::Vector;
use bicap_core::train::{grad_check, mean_joint_loss, train_epochs, TrainConfig, TrainState};
use bicap_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{List, Optional, Resolver};
use crate::{
    AugmentArgs, BleuArgs, CaptionArgs, Cli, Command, CropArg, DirectionArg, DumpGatesArgs, GradcheckArgs, Profile,
    RetrieveArgs, ToyArgs, TrainArgs,
};

const FULL_HIDDEN: usize = 1000;
const TOY_HIDDEN: usize = 16;
const TOY_EPOCHS: usize = 200;
const GRADCHECK_DIMS: [usize; 5] = [7, 3, 4, 5, 4];
const GRADCHECK_TOLERANCE: f64 = 1e-5;
const GRADCHECK_EPSILON: f64 = 1e-6;
const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Settings shared by every command.
struct Global {
    seed: u64,
    arch: Option<ArchitectureKind>,
}

/// Runs one command and returns its exit status.
pub fn run(cli: Cli) -> Result<u8> {
    let mut cfg = Resolver::load(cli.common.config.as_deref())?;
    let global = Global {
        seed: cfg.or("seed", cli.common.seed, 0)?,
        arch: cfg.opt("arch", cli.common.arch)?,
    };
    match cli.command {
        Command::Train(a) => train(a, global, cfg),
        Command::Caption(a) => caption(a, global, cfg),
        Command::Retrieve(a) => retrieve(a, global, cfg),
        Command::EvalBleu(a) => eval_bleu(a, cfg),
        Command::Gradcheck(a) => gradcheck(a, global, cfg),
        Command::AugmentPlan(a) => augment(a, cfg),
        Command::DumpGates(a) => dump_gates(a, global, cfg),
        Command::MakeToy(a) => make_toy(a, global, cfg),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Vocabulary::from_text(&text)
}

/// Loads a checkpoint and checks it against the vocabulary, the feature
/// table and any requested architecture.
fn load_model(
    path: &Path,
    global: &Global,
    vocab: Option<&Vocabulary>,
    features: Option<&FeatureTable>,
) -> Result<CaptionModel> {
    let m = checkpoint::load(path)?;
    if let Some(arch) = global.arch {
        if arch != m.arch {
            return Err(Error::Config(format!(
                "--arch {} requested but {} holds a {} model",
                arch.name(),
                path.display(),
                m.arch.name()
            )));
        }
    }
    if let Some(v) = vocab {
        if v.len() != m.dims.vocab_size {
            return Err(Error::Shape(format!(
                "vocabulary has {} entries, checkpoint expects {}",
                v.len(),
                m.dims.vocab_size
            )));
        }
    }
    if let Some(f) = features {
        if f.dim() != m.dims.feature_dim {
            return Err(Error::Shape(format!(
                "features have dimension {}, checkpoint expects {}",
                f.dim(),
                m.dims.feature_dim
            )));
        }
    }
    Ok(m)
}

fn train(a: TrainArgs, global: Global, mut cfg: Resolver) -> Result<u8> {
    let captions_path: PathBuf = cfg.required("captions", a.captions)?;
    let features_path: PathBuf = cfg.required("features", a.features)?;
    let val_captions_path: Option<PathBuf> = cfg.opt("val_captions", a.val_captions)?;
    let val_features_path: Option<PathBuf> = cfg.opt("val_features", a.val_features)?;
    let out: PathBuf = cfg.required("out", a.out)?;
    let log_path = cfg.or("log", a.log, with_suffix(&out, ".log"))?;
    let vocab_path = cfg.or("vocab_out", a.vocab_out, with_suffix(&out, ".vocab"))?;
    let profile = cfg.or("profile", a.profile, Profile::Full)?;
    let toy = profile == Profile::Toy;

    let hidden = cfg.or("hidden_dim", a.hidden_dim, if toy { TOY_HIDDEN } else { FULL_HIDDEN })?;
    let embed = cfg.or("embed_dim", a.embed_dim, hidden)?;
    let min_count = cfg.or("min_count", a.min_count, if toy { 1 } else { DEFAULT_MIN_COUNT })?;
    let base = TrainConfig::default();
    let (def_batch, def_epochs, def_patience) = if toy {
        (1, TOY_EPOCHS, None)
    } else {
        (base.batch_size, base.max_epochs, base.early_stop_patience)
    };
    let train_cfg = TrainConfig {
        learning_rate: cfg.or("learning_rate", a.learning_rate, base.learning_rate)?,
        momentum: cfg.or("momentum", a.momentum, base.momentum)?,
        weight_decay: cfg.or("weight_decay", a.weight_decay, base.weight_decay)?,
        batch_size: cfg.or("batch_size", a.batch_size, def_batch)?,
        max_epochs: cfg.or("max_epochs", a.max_epochs, def_epochs)?,
        early_stop_patience: cfg.or("patience", a.patience, Optional(def_patience))?.0,
        grad_clip: cfg.or("grad_clip", a.grad_clip, Optional(base.grad_clip))?.0,
        seed: global.seed,
    };
    cfg.finish()?;
    train_cfg.validate()?;
    if hidden == 0 || embed == 0 {
        return Err(Error::Config("hidden_dim and embed_dim must be at least 1".into()));
    }

    let captions = read_captions(&captions_path)?;
    let features = read_features(&features_path)?;
    let vocab = Vocabulary::build(captions.iter().map(|(_, t)| t.as_str()), min_count)?;
    let train_set = assemble_examples(&vocab, &captions, &features)?;
    let val_set = match (&val_captions_path, &val_features_path) {
        (None, None) => train_set.clone(),
        (Some(vc), vf) => {
            let vcap = read_captions(vc)?;
            let vfeat = match vf {
                Some(p) => read_features(p)?,
                None => features.clone(),
            };
            if vfeat.dim() != features.dim() {
                return Err(Error::Shape(format!(
                    "validation features have dimension {}, training features {}",
                    vfeat.dim(),
                    features.dim()
                )));
            }
            assemble_examples(&vocab, &vcap, &vfeat)?
        }
        (None, Some(_)) => {
            return Err(Error::Config("--val-features needs --val-captions".into()));
        }
    };

    let arch = global.arch.unwrap_or(ArchitectureKind::BiLstm);
    let dims = ModelDims::new(vocab.len(), features.dim(), embed, hidden);
    let model = CaptionModel::init(arch, dims, global.seed)?;

    let mut log = String::new();
    let _ = writeln!(
        log,
        "arch {} vocab {} feature_dim {} embed_dim {} hidden_dim {} train {} val {}",
        arch.name(),
        vocab.len(),
        features.dim(),
        embed,
        hidden,
        train_set.len(),
        val_set.len()
    );
    let _ = writeln!(log, "initial val_loss {}", mean_joint_loss(&model, &val_set)?);
    print!("{log}");
    let state = train_epochs(TrainState::new(model), &train_set, &val_set, &train_cfg, |r| {
        let line = r.log_line();
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    let _ = writeln!(log, "best val_loss {}", mean_joint_loss(&state.model, &val_set)?);

    checkpoint::save(&state.model, &out)?;
    write_file(&vocab_path, &vocab.to_text())?;
    write_file(&log_path, &log)?;
    Ok(0)
}

fn caption(a: CaptionArgs, global: Global, mut cfg: Resolver) -> Result<u8> {
    let ckpt: PathBuf = cfg.required("checkpoint", a.checkpoint)?;
    let features_path: PathBuf = cfg.required("features", a.features)?;
    let vocab_path: PathBuf = cfg.required("vocab", a.vocab)?;
    let beam = cfg.or("beam", a.beam, 1)?;
    let max_len = cfg.or("max_len", a.max_len, DEFAULT_MAX_LEN)?;
    let gates_dir: Option<PathBuf> = cfg.opt("gates_dir", a.gates_dir)?;
    let out: Option<PathBuf> = cfg.opt("out", a.out)?;
    cfg.finish()?;
    if beam == 0 || max_len == 0 {
        return Err(Error::Config("--beam and --max-len must be at least 1".into()));
    }

    let features = read_features(&features_path)?;
    let vocab = read_vocab(&vocab_path)?;
    let m = load_model(&ckpt, &global, Some(&vocab), Some(&features))?;

    let mut text = String::new();
    for (id, f) in features.iter() {
        let c = caption_image(&m, f, beam, max_len)?;
        let _ = writeln!(
            text,
            "{id}\t{}\t{}\t{}\t{}",
            c.chosen.name(),
            c.logprob_fwd,
            c.logprob_bwd,
            vocab.decode(&c.caption)
        );
        if let Some(dir) = &gates_dir {
            write_gate_traces(&m, f, id, &[Direction::Forward, Direction::Backward], max_len, Some(&vocab), dir)?;
        }
    }
    emit(out.as_deref(), &text)?;
    Ok(0)
}

fn write_gate_traces(
    m: &CaptionModel,
    feature: &[f64],
    id: &str,
    dirs: &[Direction],
    max_len: usize,
    vocab: Option<&Vocabulary>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_owned(),
        source: e,
    })?;
    for &dir in dirs {
        let trace = dump_gate_trace(m, feature, dir, max_len)?;
        let stem = format!("{id}.{}", dir.name());
        write_file(&out_dir.join(format!("{stem}.gates.csv")), &trace.gates_csv())?;
        write_file(&out_dir.join(format!("{stem}.words.csv")), &trace.words_csv(vocab))?;
    }
    Ok(())
}

fn retrieve(a: RetrieveArgs, global: Global, mut cfg: Resolver) -> Result<u8> {
    let ckpt: PathBuf = cfg.required("checkpoint", a.checkpoint)?;
    let features_path: PathBuf = cfg.required("features", a.features)?;
    let captions_path: PathBuf = cfg.required("captions", a.captions)?;
    let vocab_path: PathBuf = cfg.required("vocab", a.vocab)?;
    let ks = cfg.or("ks", a.ks, List(DEFAULT_KS.to_vec()))?.0;
    let scores_out: Option<PathBuf> = cfg.opt("scores_out", a.scores_out)?;
    let out: Option<PathBuf> = cfg.opt("out", a.out)?;
    cfg.finish()?;

    let features = read_features(&features_path)?;
    let captions = read_captions(&captions_path)?;
    let vocab = read_vocab(&vocab_path)?;
    let m = load_model(&ckpt, &global, Some(&vocab), Some(&features))?;

    let examples = assemble_examples(&vocab, &captions, &features)?;
    let images: Vec<(String, Vec<f64>)> = features
        .iter()
        .filter(|(id, _)| examples.iter().any(|e| e.image_id == *id))
        .map(|(id, f)| (id.to_owned(), f.to_vec()))
        .collect();
    let row_of: HashMap<&str, usize> = images.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let sentences: Vec<(String, Vec<usize>)> = examples
        .iter()
        .enumerate()
        .map(|(j, e)| (format!("{}#{j}", e.image_id), e.tokens.clone()))
        .collect();
    let mut gt = vec![Vec::new(); images.len()];
    for (j, e) in examples.iter().enumerate() {
        gt[row_of[e.image_id.as_str()]].push(j);
    }

    let sm = ScoreMatrix::from_model(&m, &images, &sentences)?;
    if let Some(p) = &scores_out {
        write_file(p, &sm.to_csv())?;
    }
    let rows = retrieval_report(&sm, &gt, &ks)?;
    emit(out.as_deref(), &metric_rows_text(&rows))?;
    Ok(0)
}

fn eval_bleu(a: BleuArgs, mut cfg: Resolver) -> Result<u8> {
    let cand_path: PathBuf = cfg.required("candidates", a.candidates)?;
    let ref_path: PathBuf = cfg.required("references", a.references)?;
    let max_n = cfg.or("max_n", a.max_n, MAX_BLEU_ORDER)?;
    let out: Option<PathBuf> = cfg.opt("out", a.out)?;
    cfg.finish()?;
    if max_n == 0 || max_n > MAX_BLEU_ORDER {
        return Err(Error::Config(format!("--max-n must lie in 1..={MAX_BLEU_ORDER}, got {max_n}")));
    }

    let candidates = read_captions(&cand_path)?;
    let mut refs: HashMap<String, Vec<Vec<String>>> = HashMap::new();
    for (id, text) in read_captions(&ref_path)? {
        refs.entry(id).or_default().push(tokenize(&text));
    }
    let mut pairs = Vec::with_capacity(candidates.len());
    for (id, text) in &candidates {
        let r = refs
            .get(id)
            .ok_or_else(|| Error::Data(format!("no references for candidate `{id}`")))?;
        pairs.push((tokenize(text), r.clone()));
    }

    let mut rows = Vec::new();
    for n in 1..=max_n {
        rows.push((format!("BLEU-{n}"), corpus_bleu(&pairs, n)?.score));
    }
    let report = corpus_bleu(&pairs, max_n)?;
    rows.push(("brevity_penalty".to_owned(), report.brevity_penalty));
    emit(out.as_deref(), &metric_rows_text(&rows))?;
    Ok(0)
}

fn random_caption_example(seed: u64, k: usize, feat: usize, t: usize) -> CaptionedExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    CaptionedExample {
        image_id: "gradcheck".into(),
        feature: (0..feat).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vector>(),
        tokens: (0..t - 1).map(|_| rng.gen_range(2..k)).collect(),
    }
}

fn gradcheck(a: GradcheckArgs, global: Global, mut cfg: Resolver) -> Result<u8> {
    let dims = cfg.or("dims", a.dims, List(GRADCHECK_DIMS.to_vec()))?.0;
    let tolerance = cfg.or("tolerance", a.tolerance, GRADCHECK_TOLERANCE)?;
    let epsilon = cfg.or("epsilon", a.epsilon, GRADCHECK_EPSILON)?;
    let out: Option<PathBuf> = cfg.opt("out", a.out)?;
    cfg.finish()?;
    let &[k, feat, embed, hidden, t] = dims.as_slice() else {
        return Err(Error::Config(format!("--dims needs five values K,D_feat,D_e,H,T, got {}", dims.len())));
    };
    if k < 3 || feat == 0 || embed == 0 || hidden == 0 || t < 2 {
        return Err(Error::Config("--dims needs K >= 3, T >= 2 and nonzero widths".into()));
    }

    let arch = global.arch.unwrap_or(ArchitectureKind::BiLstm);
    let m = CaptionModel::init(arch, ModelDims::new(k, feat, embed, hidden), global.seed)?;
    let ex = random_caption_example(global.seed, k, feat, t);
    let report = grad_check(&m, &ex, epsilon, tolerance)?;
    emit(out.as_deref(), &format!("arch {}\n{}", arch.name(), report.to_text()))?;
    if report.passed() {
        return Ok(0);
    }
    match report.worst() {
        Some((block, w)) => eprintln!(
            "bicap: gradient check failed: worst {block}[{}] analytic {:e} numeric {:e} rel_err {:e}",
            w.index, w.analytic, w.numeric, w.rel_err
        ),
        None => eprintln!("bicap: gradient check failed"),
    }
    Ok(1)
}

fn augment(a: AugmentArgs, mut cfg: Resolver) -> Result<u8> {
    let width: u32 = cfg.required("width", a.width)?;
    let height: u32 = cfg.required("height", a.height)?;
    let image_id = cfg.or("image_id", a.image_id, "image".to_owned())?;
    let base = cfg.or("base", a.base, DEFAULT_BASE)?;
    let crop = cfg.or("crop", a.crop, CropArg(CropSize::Default))?.0;
    let scales = cfg.or("scales", a.scales, List(SCALES.to_vec()))?.0;
    let out: Option<PathBuf> = cfg.opt("out", a.out)?;
    cfg.finish()?;
    let plan = augment_plan_with_scales(width, height, base, crop, &scales)?;
    let mut text = String::from("image_id,scale,corner,x,y,w,h,mirror\n");
    text.push_str(&plan.to_csv_rows(&image_id));
    emit(out.as_deref(), &text)?;
    Ok(0)
}

fn dump_gates(a: DumpGatesArgs, global: Global, mut cfg: Resolver) -> Result<u8> {
    let ckpt: PathBuf = cfg.required("checkpoint", a.checkpoint)?;
    let features_path: PathBuf = cfg.required("features", a.features)?;
    let image_id: String = cfg.required("image_id", a.image_id)?;
    let direction = cfg.or("direction", a.direction, DirectionArg::Both)?;
    let max_len = cfg.or("max_len", a.max_len, DEFAULT_MAX_LEN)?;
    let vocab_path: Option<PathBuf> = cfg.opt("vocab", a.vocab)?;
    let out_dir: PathBuf = cfg.required("out_dir", a.out_dir)?;
    cfg.finish()?;

    let features = read_features(&features_path)?;
    let vocab = vocab_path.as_deref().map(read_vocab).transpose()?;
    let m = load_model(&ckpt, &global, vocab.as_ref(), Some(&features))?;
    let feature = features
        .get(&image_id)
        .ok_or_else(|| Error::Data(format!("no feature vector for image `{image_id}`")))?;
    let dirs: &[Direction] = match direction {
        DirectionArg::Forward => &[Direction::Forward],
        DirectionArg::Backward => &[Direction::Backward],
        DirectionArg::Both => &[Direction::Forward, Direction::Backward],
    };
    write_gate_traces(&m, feature, &image_id, dirs, max_len, vocab.as_ref(), &out_dir)?;
    Ok(0)
}

fn make_toy(a: ToyArgs, global: Global, mut cfg: Resolver) -> Result<u8> {
    let out_dir: PathBuf = cfg.required("out_dir", a.out_dir)?;
    let images = cfg.or("images", a.images, 10)?;
    let k = cfg.or("vocab_size", a.vocab_size, 20)?;
    let feat = cfg.or("feature_dim", a.feature_dim, TOY_HIDDEN)?;
    cfg.finish()?;

    let toy = make_toy_dataset(images, k, feat, global.seed)?;
    let mut captions = String::new();
    let mut table = FeatureTable::new(feat);
    for ex in &toy.examples {
        let _ = writeln!(captions, "{}\t{}", ex.image_id, toy.vocab.decode(&ex.tokens));
        table.insert(ex.image_id.clone(), ex.feature.clone())?;
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    write_file(&out_dir.join("captions.tsv"), &captions)?;
    write_file(&out_dir.join("features.txt"), &write_features(&table))?;
    Ok(0)
}
