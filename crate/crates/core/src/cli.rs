//! Command-line front end for the `qcg` binary.
//!
//! Exit codes: 0 on success, 1 on usage or parameter errors, 2 on data, file
//! or parse errors. Results go to stdout, diagnostics to stderr.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::analysis::{self, HostingConfig};
use crate::calibrate::{self, SweepOptions};
use crate::error::{Error, Result};
use crate::eval::{self, BleuPair, PassMatrix};
use crate::model::{self, Engine, ModelBundle, ModelConfig, QuantMode, QuantScheme, Strategy};
use crate::perturb::{self, ParaphraseTable, PerturbLevel, PerturbSpec, Prompt, Resources, SynonymLexicon};
use crate::quantizer::Granularity;
use crate::report::{self, Format};

/// Environment variable that overrides `--seed` when set.
pub const SEED_ENV: &str = "QCG_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "qcg",
    version,
    about = "Post-training quantization toolkit for small decoder models"
)]
struct Cli {
    /// Output format for result rows: table, csv or json.
    #[arg(long, global = true, display_order = 100, default_value = "table")]
    format: Format,
    /// Shorthand for `--format json`.
    #[arg(long, global = true, display_order = 100)]
    json: bool,
    /// Worker threads for analysis and calibration.
    #[arg(long, global = true, display_order = 100, default_value_t = 1)]
    threads: usize,
    /// Base seed; the QCG_SEED environment variable takes precedence.
    #[arg(long, global = true, display_order = 100, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random fp32 model bundle.
    Fixture(FixtureArgs),
    /// Quantize the linear-layer weights of a bundle.
    Quantize(QuantizeArgs),
    /// Choose static activation clip ranges from calibration data.
    Calibrate(CalibrateArgs),
    /// Generate tokens from a bundle.
    Run(RunArgs),
    /// Diagnostics and ablations.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// pass@k from a pass/fail matrix.
    Passk(PasskArgs),
    /// pass@1 drop and rank-sum test between unperturbed and perturbed results.
    Robustness(RobustnessArgs),
    /// Smoothed BLEU over candidate/reference pairs.
    Bleu(BleuArgs),
    /// Perturb prompts at character, word or sentence level.
    Perturb(PerturbArgs),
    /// Time fp32 against int8 matrix multiplication.
    Bench(BenchArgs),
    /// Hosting time, carbon and cost for a prediction workload.
    Hosting(HostingArgs),
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Output bundle path.
    #[arg(long)]
    out: PathBuf,
    /// Model width; 128 when absent.
    #[arg(long)]
    d_model: Option<usize>,
    /// Decoder blocks; 8 when absent.
    #[arg(long)]
    n_layers: Option<usize>,
    /// Attention heads; 4 when absent.
    #[arg(long)]
    n_heads: Option<usize>,
    /// Vocabulary size; 256 when absent.
    #[arg(long)]
    vocab: Option<usize>,
    /// Longest accepted sequence; 128 when absent.
    #[arg(long)]
    max_seq_len: Option<usize>,
    /// Also quantize the output projection.
    #[arg(long)]
    quantize_head: bool,
}

#[derive(Debug, Args)]
struct SchemeArgs {
    /// fp32, weight-only, dynamic or static.
    #[arg(long, default_value = "dynamic")]
    mode: QuantMode,
    /// Weight granularity: per-tensor or per-column.
    #[arg(long, default_value = "per-column")]
    weights: Granularity,
    /// Weight bitwidth.
    #[arg(long, default_value_t = 8)]
    bits: u8,
    /// Activation bitwidth.
    #[arg(long, default_value_t = 8)]
    act_bits: u8,
}

impl SchemeArgs {
    fn scheme(&self) -> QuantScheme {
        match self.mode {
            QuantMode::Fp32 => QuantScheme::fp32(),
            QuantMode::WeightOnly => QuantScheme::weight_only(self.weights, self.bits),
            QuantMode::Dynamic => QuantScheme::dynamic(self.weights, self.bits, self.act_bits),
            QuantMode::Static => QuantScheme::static_(self.weights, self.bits, self.act_bits),
        }
    }
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Input fp32 bundle.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output quantized bundle.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Bundle to calibrate.
    #[arg(long)]
    model: PathBuf,
    /// Token JSONL calibration data.
    #[arg(long)]
    data: PathBuf,
    /// Scale table JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Optional copy of the model with the scale table attached.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Activation bitwidth.
    #[arg(long, default_value_t = 8)]
    act_bits: u8,
    /// Number of clip-ratio candidates.
    #[arg(long, default_value_t = calibrate::DEFAULT_GRID)]
    grid: usize,
    /// Reservoir size per layer.
    #[arg(long, default_value_t = calibrate::DEFAULT_SAMPLE_CAP)]
    sample_cap: usize,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Bundle to run.
    #[arg(long)]
    model: PathBuf,
    /// Prompt text, encoded as bytes.
    #[arg(long, conflicts_with = "tokens")]
    prompt: Option<String>,
    /// Token JSONL prompts.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Tokens to generate per prompt.
    #[arg(long, default_value_t = 16)]
    max_new: usize,
    /// Sampling temperature; greedy when absent.
    #[arg(long)]
    temperature: Option<f32>,
    /// Scheme override; defaults to the bundle's own scheme.
    #[arg(long)]
    mode: Option<QuantMode>,
    /// Weight granularity for `--mode`.
    #[arg(long, default_value = "per-column")]
    weights: Granularity,
    /// Weight bitwidth for `--mode`.
    #[arg(long, default_value_t = 8)]
    bits: u8,
    /// Activation bitwidth for `--mode`.
    #[arg(long, default_value_t = 8)]
    act_bits: u8,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// Token JSONL probe set; random sequences when absent.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Random probe sequences.
    #[arg(long, default_value_t = 64)]
    probe_count: usize,
    /// Tokens per random probe sequence.
    #[arg(long, default_value_t = 16)]
    probe_len: usize,
}

impl ProbeArgs {
    fn load(&self, m: &ModelBundle, seed: u64) -> Result<Vec<Vec<u32>>> {
        match &self.probe {
            Some(path) => read_tokens(path),
            None => {
                if self.probe_count == 0 || self.probe_len == 0 {
                    return Err(Error::param("probe count and length must be positive"));
                }
                Ok(analysis::probe_set(
                    self.probe_count,
                    self.probe_len,
                    m.config().vocab_size,
                    seed,
                ))
            }
        }
    }
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Byte sizes of an fp32 and a quantized bundle.
    Size {
        /// fp32 bundle.
        #[arg(long)]
        fp: PathBuf,
        /// Quantized bundle.
        #[arg(long)]
        quantized: PathBuf,
    },
    /// Weight quantization noise versus matrix width and granularity.
    Noise {
        /// Comma-separated matrix widths.
        #[arg(long, value_delimiter = ',', default_values_t = [512usize, 1024, 2048, 4096])]
        widths: Vec<usize>,
        /// Weight bitwidth.
        #[arg(long, default_value_t = 8)]
        bits: u8,
    },
    /// Per-layer hidden-state error against fp32.
    Depth {
        /// fp32 bundle.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Spread of per-example max activation per layer.
    Maxact {
        /// fp32 bundle.
        #[arg(long)]
        model: PathBuf,
        /// Token JSONL inputs.
        #[arg(long)]
        data: PathBuf,
    },
    /// Static per-column agreement as a function of calibration set size.
    CalibrationSize {
        /// fp32 bundle.
        #[arg(long)]
        model: PathBuf,
        /// Token JSONL calibration pool.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated calibration set sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Weight bitwidth.
        #[arg(long, default_value_t = 8)]
        bits: u8,
        /// Activation bitwidth.
        #[arg(long, default_value_t = 8)]
        act_bits: u8,
        /// Number of clip-ratio candidates.
        #[arg(long, default_value_t = calibrate::DEFAULT_GRID)]
        grid: usize,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Top-1 agreement and logit MSE for several bitwidth settings.
    Precision {
        /// fp32 bundle.
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated `WxAy` labels.
        #[arg(long, value_delimiter = ',', default_values_t = ["W16A16".to_string(), "W8A8".into(), "W4A8".into(), "W8A4".into()])]
        schemes: Vec<String>,
        /// Weight granularity.
        #[arg(long, default_value = "per-column")]
        weights: Granularity,
        #[command(flatten)]
        probe: ProbeArgs,
    },
}

#[derive(Debug, Args)]
struct PasskArgs {
    /// Pass/fail JSONL.
    #[arg(long)]
    results: PathBuf,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    k: Vec<usize>,
}

#[derive(Debug, Args)]
struct RobustnessArgs {
    /// Pass/fail JSONL on the original prompts.
    #[arg(long)]
    unperturbed: PathBuf,
    /// Pass/fail JSONL on the perturbed prompts.
    #[arg(long)]
    perturbed: PathBuf,
}

#[derive(Debug, Args)]
struct BleuArgs {
    /// Candidate/reference JSONL.
    #[arg(long)]
    pairs: PathBuf,
    /// Largest n-gram order.
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// One row per pair instead of the corpus mean.
    #[arg(long)]
    per_pair: bool,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    /// Prompt JSONL with `id` and `text` fields.
    #[arg(long)]
    prompts: PathBuf,
    /// char, word or sentence.
    #[arg(long)]
    level: PerturbLevel,
    /// Per-character or per-word probability; level default when absent.
    #[arg(long)]
    rate: Option<f64>,
    /// Synonym TSV for the word level.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Paraphrase JSONL for the sentence level.
    #[arg(long)]
    paraphrases: Option<PathBuf>,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated `MxKxN` shapes.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<String>,
    /// Timed runs per shape, at least 3.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Debug, Args)]
struct HostingArgs {
    /// gCO2eq per host hour.
    #[arg(long)]
    carbon_rate: f64,
    /// Price per host hour.
    #[arg(long)]
    price_rate: f64,
    /// Seconds per prediction.
    #[arg(long)]
    latency: f64,
    /// Number of predictions served.
    #[arg(long)]
    predictions: f64,
}

/// Parses and runs `argv` (program name first). Returns the exit code.
pub fn dispatch<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match execute(cli) {
        Ok(bytes) => match stdout.write_all(&bytes).and_then(|_| stdout.flush()) {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                2
            }
        },
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Parameter(_) => 1,
        _ => 2,
    }
}

fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn execute(cli: Cli) -> Result<Vec<u8>> {
    if cli.threads == 0 {
        return Err(Error::param("--threads must be at least 1"));
    }
    let ctx = Context {
        format: if cli.json { Format::Json } else { cli.format },
        seed: resolve_seed(cli.seed)?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut out = Vec::new();
        ctx.run(cli.command, &mut out)?;
        Ok(out)
    })
}

struct Context {
    format: Format,
    seed: u64,
}

#[derive(Serialize)]
struct BundleRow {
    path: String,
    scheme: String,
    parameters: usize,
    bytes: u64,
}

#[derive(Serialize)]
struct ScaleRow<'a> {
    layer: &'a str,
    alpha: f32,
    ratio: f32,
}

#[derive(Serialize)]
struct RunRow {
    index: usize,
    prompt_tokens: usize,
    tokens: Vec<u32>,
    text: String,
}

#[derive(Serialize)]
struct RobustnessRow {
    tasks: usize,
    pass1_unperturbed: f64,
    pass1_perturbed: f64,
    drop_pct: f64,
    u: f64,
    p_value: f64,
    exact: bool,
}

#[derive(Serialize)]
struct BleuRow {
    pairs: usize,
    bleu: f64,
}

#[derive(Serialize)]
struct BleuPairRow {
    index: usize,
    bleu: f64,
}

fn read_tokens(path: &std::path::Path) -> Result<Vec<Vec<u32>>> {
    let lines: Vec<model::TokenLine> = crate::jsonl::read_file(path)?;
    Ok(lines.into_iter().map(|l| l.tokens).collect())
}

fn file_len(path: &std::path::Path) -> Result<u64> {
    Ok(std::fs::metadata(path).map_err(|e| Error::from(e).in_file(path))?.len())
}

fn bundle_scheme(m: &ModelBundle) -> QuantScheme {
    m.quant_state().map_or_else(QuantScheme::fp32, |q| q.scheme)
}

/// Parses a `WxAy` label into a dynamic scheme.
fn parse_precision(label: &str, weights: Granularity) -> Result<QuantScheme> {
    let bad = || Error::param(format!("scheme label {label:?} is not of the form WxAy"));
    let rest = label.strip_prefix(['W', 'w']).ok_or_else(bad)?;
    let (w, a) = rest.split_once(['A', 'a']).ok_or_else(bad)?;
    let w: u8 = w.parse().map_err(|_| bad())?;
    let a: u8 = a.parse().map_err(|_| bad())?;
    Ok(QuantScheme::dynamic(weights, w, a))
}

fn parse_dims(spec: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = spec.split('x').collect();
    let bad = || Error::param(format!("shape {spec:?} is not of the form MxKxN"));
    match parts.as_slice() {
        [m, k, n] => Ok((
            m.parse().map_err(|_| bad())?,
            k.parse().map_err(|_| bad())?,
            n.parse().map_err(|_| bad())?,
        )),
        _ => Err(bad()),
    }
}

impl Context {
    fn emit<T: Serialize>(&self, out: &mut Vec<u8>, rows: &[T]) -> Result<()> {
        report::write_rows(out, self.format, rows)
    }

    fn run(&self, command: Command, out: &mut Vec<u8>) -> Result<()> {
        match command {
            Command::Fixture(a) => {
                let mut cfg = match a.d_model {
                    Some(d) => ModelConfig::with_width(d),
                    None => ModelConfig::default(),
                };
                cfg.n_layers = a.n_layers.unwrap_or(cfg.n_layers);
                cfg.n_heads = a.n_heads.unwrap_or(cfg.n_heads);
                cfg.vocab_size = a.vocab.unwrap_or(cfg.vocab_size);
                cfg.max_seq_len = a.max_seq_len.unwrap_or(cfg.max_seq_len);
                cfg.quantize_head = a.quantize_head;
                let m = model::init_fixture(&cfg, self.seed)?;
                model::save_bundle(&m, &a.out)?;
                self.emit(
                    out,
                    &[BundleRow {
                        path: a.out.display().to_string(),
                        scheme: "fp32".into(),
                        parameters: m.stored_parameters(),
                        bytes: file_len(&a.out)?,
                    }],
                )
            }
            Command::Quantize(a) => {
                let m = model::load_bundle(&a.input)?;
                let scheme = a.scheme.scheme();
                let q = model::quantize_model(&m, &scheme)?;
                model::save_bundle(&q, &a.out)?;
                self.emit(
                    out,
                    &[BundleRow {
                        path: a.out.display().to_string(),
                        scheme: scheme.label(),
                        parameters: q.stored_parameters(),
                        bytes: file_len(&a.out)?,
                    }],
                )
            }
            Command::Calibrate(a) => {
                let m = model::load_bundle(&a.model)?;
                let data = read_tokens(&a.data)?;
                let stats = calibrate::collect_stats(&m, &data, a.sample_cap, self.seed)?;
                let cal = calibrate::calibrate_scales(&stats, a.act_bits, a.grid)?;
                cal.table.save(&a.out)?;
                if let Some(path) = &a.model_out {
                    model::save_bundle(&m.clone().with_act_scales(cal.table.clone()), path)?;
                }
                let rows: Vec<ScaleRow> = cal
                    .table
                    .layers
                    .iter()
                    .map(|(layer, s)| ScaleRow {
                        layer,
                        alpha: s.alpha,
                        ratio: s.ratio,
                    })
                    .collect();
                self.emit(out, &rows)
            }
            Command::Run(a) => self.run_generate(a, out),
            Command::Analyze(cmd) => self.analyze(cmd, out),
            Command::Passk(a) => {
                let m = PassMatrix::from_jsonl(open(&a.results)?).map_err(|e| e.in_file(&a.results))?;
                let mut row = Map::new();
                row.insert("tasks".into(), Value::from(m.tasks.len()));
                for &k in &a.k {
                    row.insert(format!("pass@{k}"), Value::from(eval::aggregate_pass_at_k(&m, k)?));
                }
                self.emit(out, &[row])
            }
            Command::Robustness(a) => {
                let clean = PassMatrix::from_jsonl(open(&a.unperturbed)?).map_err(|e| e.in_file(&a.unperturbed))?;
                let pert = PassMatrix::from_jsonl(open(&a.perturbed)?).map_err(|e| e.in_file(&a.perturbed))?;
                let ids = |m: &PassMatrix| m.tasks.iter().map(|t| t.task_id.clone()).collect::<Vec<_>>();
                if ids(&clean) != ids(&pert) {
                    return Err(Error::Inconsistent(
                        "unperturbed and perturbed results list different tasks".into(),
                    ));
                }
                let a1 = clean.per_task(1)?;
                let b1 = pert.per_task(1)?;
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let (u1, p1) = (mean(&a1), mean(&b1));
                let test = eval::rank_sum_test(&a1, &b1)?;
                self.emit(
                    out,
                    &[RobustnessRow {
                        tasks: a1.len(),
                        pass1_unperturbed: u1,
                        pass1_perturbed: p1,
                        drop_pct: eval::robustness_drop(u1, p1)?,
                        u: test.u,
                        p_value: test.p_value,
                        exact: test.exact,
                    }],
                )
            }
            Command::Bleu(a) => {
                let pairs: Vec<BleuPair> = crate::jsonl::read_file(&a.pairs)?;
                if pairs.is_empty() {
                    return Err(Error::EmptyInput("BLEU pairs"));
                }
                let scores = pairs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        p.score(a.max_n)
                            .map_err(|e| Error::parse(format!("pair {}", i + 1), e.to_string()))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if a.per_pair {
                    let rows: Vec<BleuPairRow> = scores
                        .iter()
                        .enumerate()
                        .map(|(index, &bleu)| BleuPairRow { index, bleu })
                        .collect();
                    self.emit(out, &rows)
                } else {
                    let bleu = scores.iter().sum::<f64>() / scores.len() as f64;
                    self.emit(
                        out,
                        &[BleuRow {
                            pairs: scores.len(),
                            bleu,
                        }],
                    )
                }
            }
            Command::Perturb(a) => {
                let prompts: Vec<Prompt> = crate::jsonl::read_file(&a.prompts)?;
                let spec = match a.rate {
                    Some(rate) => PerturbSpec::new(a.level, rate, self.seed)?,
                    None => PerturbSpec::with_default_rate(a.level, self.seed),
                };
                let lexicon = a.lexicon.as_deref().map(SynonymLexicon::load).transpose()?;
                let paraphrases = a.paraphrases.as_deref().map(ParaphraseTable::load).transpose()?;
                let res = Resources {
                    lexicon: lexicon.as_ref(),
                    paraphrases: paraphrases.as_ref(),
                };
                let perturbed = perturb::perturb_prompts(&prompts, &spec, res)?;
                match &a.out {
                    Some(path) => {
                        let mut buf = Vec::new();
                        crate::jsonl::write_lines(&mut buf, &perturbed)?;
                        std::fs::write(path, buf).map_err(|e| Error::from(e).in_file(path))
                    }
                    None => crate::jsonl::write_lines(out, &perturbed),
                }
            }
            Command::Bench(a) => {
                let dims = if a.dims.is_empty() {
                    analysis::DEFAULT_BENCH_DIMS.to_vec()
                } else {
                    a.dims.iter().map(|d| parse_dims(d)).collect::<Result<_>>()?
                };
                let rows = analysis::int_matmul_bench(&dims, a.repeats, self.seed)?;
                self.emit(out, &rows)
            }
            Command::Hosting(a) => {
                let cfg = HostingConfig {
                    carbon_rate: a.carbon_rate,
                    price_rate: a.price_rate,
                    latency: a.latency,
                };
                let est = analysis::hosting_estimate(&cfg, a.predictions)?;
                self.emit(out, &[est])
            }
        }
    }

    fn run_generate(&self, a: RunArgs, out: &mut Vec<u8>) -> Result<()> {
        let m = model::load_bundle(&a.model)?;
        let scheme = match a.mode {
            None => bundle_scheme(&m),
            Some(mode) => SchemeArgs {
                mode,
                weights: a.weights,
                bits: a.bits,
                act_bits: a.act_bits,
            }
            .scheme(),
        };
        let prompts = match (&a.prompt, &a.tokens) {
            (Some(text), None) => vec![text.bytes().map(u32::from).collect()],
            (None, Some(path)) => read_tokens(path)?,
            _ => return Err(Error::param("exactly one of --prompt or --tokens is required")),
        };
        let engine = Engine::new(&m, scheme)?;
        let rows = prompts
            .iter()
            .enumerate()
            .map(|(index, prompt)| {
                let strategy = match a.temperature {
                    Some(tau) => Strategy::Temperature {
                        tau,
                        seed: self.seed.wrapping_add(index as u64),
                    },
                    None => Strategy::Greedy,
                };
                let tokens = model::generate(&engine, prompt, a.max_new, strategy)?;
                let bytes: Vec<u8> = tokens.iter().map(|&t| u8::try_from(t).unwrap_or(b'?')).collect();
                Ok(RunRow {
                    index,
                    prompt_tokens: prompt.len(),
                    text: String::from_utf8_lossy(&bytes).into_owned(),
                    tokens,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.emit(out, &rows)
    }

    fn analyze(&self, cmd: AnalyzeCommand, out: &mut Vec<u8>) -> Result<()> {
        match cmd {
            AnalyzeCommand::Size { fp, quantized } => {
                let r = analysis::size_report(&fp, &quantized)?;
                self.emit(out, &[r])
            }
            AnalyzeCommand::Noise { widths, bits } => {
                let rows = analysis::noise_sweep(
                    &widths,
                    &[Granularity::PerTensor, Granularity::PerColumn],
                    bits,
                    self.seed,
                )?;
                self.emit(out, &rows)
            }
            AnalyzeCommand::Depth {
                model: path,
                scheme,
                probe,
            } => {
                let m = model::load_bundle(&path)?;
                let probe = probe.load(&m, self.seed)?;
                let profile = analysis::depth_profile(&m, &scheme.scheme(), &probe)?;
                self.emit(out, &profile.rows)
            }
            AnalyzeCommand::Maxact { model: path, data } => {
                let m = model::load_bundle(&path)?;
                let data = read_tokens(&data)?;
                let stats = calibrate::collect_stats(&m, &data, calibrate::DEFAULT_SAMPLE_CAP, self.seed)?;
                self.emit(out, &analysis::max_activation_report(&stats)?)
            }
            AnalyzeCommand::CalibrationSize {
                model: path,
                data,
                sizes,
                bits,
                act_bits,
                grid,
                probe,
            } => {
                let m = model::load_bundle(&path)?;
                let data = read_tokens(&data)?;
                let probe = probe.load(&m, self.seed)?;
                let opts = SweepOptions {
                    weight_bits: bits,
                    activation_bits: act_bits,
                    grid_size: grid,
                    seed: self.seed,
                    ..SweepOptions::default()
                };
                let rows = calibrate::calibration_size_sweep(&m, &data, &probe, &sizes, &opts)?;
                self.emit(out, &rows)
            }
            AnalyzeCommand::Precision {
                model: path,
                schemes,
                weights,
                probe,
            } => {
                let m = model::load_bundle(&path)?;
                let probe = probe.load(&m, self.seed)?;
                let schemes = schemes
                    .iter()
                    .map(|s| parse_precision(s, weights))
                    .collect::<Result<Vec<_>>>()?;
                self.emit(out, &analysis::precision_grid(&m, &schemes, &probe)?)
            }
        }
    }
}

fn open(path: &std::path::Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::from(e).in_file(path))
}
