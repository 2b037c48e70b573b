use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use tabfp::cluster::{nearest_neighbors, precision_at_1, query_top_k, ward_d2, Catalog};
use tabfp::datamodel::{load_csv, Ablation, DpLevel, FingerprintConfig};
use tabfp::embed::{encode, load_embedding, save_embedding, Provider, ProviderConfig, DEFAULT_DIM, ENDPOINT_ENV};
use tabfp::harness::{default_catalog, generate_catalog, run_dp_sweep, SweepConfig, TruthPairs};
use tabfp::serialize::{load_fingerprint, save_fingerprint};
use tabfp::similarity::{
    cca_similarity, explain_alignment, permutation_penalty, sparse_cca, CcaConfig, ComponentRule, DistanceMatrix,
    SparseCcaConfig, DEFAULT_PENALTY_GRID,
};
use tabfp::ErrorClass;

#[derive(Parser)]
#[command(name = "tabfp", version, about = "Statistical fingerprints and similarity search for tabular datasets")]
struct Cli {
    /// Output style for results printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the descriptor sentences of a CSV table.
    Fingerprint(FingerprintArgs),
    /// Embed a fingerprint into a TBEMB1 matrix file.
    Embed(EmbedArgs),
    /// Compare two embedded datasets.
    Compare(CompareArgs),
    /// Manage and search a catalog directory.
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Precision at 1 of nearest-neighbour assignments against truth pairs.
    Eval(EvalArgs),
    /// Write the synthetic twin catalog as CSV files.
    Synth(SynthArgs),
    /// Run the pipeline across privacy budgets.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dataset id; defaults to the input file stem.
    #[arg(long)]
    id: Option<String>,
    /// Enables differential privacy with this budget.
    #[arg(long)]
    dp_epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = DpLevelArg::Descriptor)]
    dp_level: DpLevelArg,
    /// JSON object of column name to `[lo, hi]` clamp bounds.
    #[arg(long)]
    bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    kappa: usize,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = AblationArg::Full)]
    ablation: AblationArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum DpLevelArg {
    Descriptor,
    Data,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoValue,
    NoValueNoVariable,
    MultivariateOnly,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoValue => Ablation::NoValue,
            AblationArg::NoValueNoVariable => Ablation::NoValueNoVariable,
            AblationArg::MultivariateOnly => Ablation::MultivariateOnly,
        }
    }
}

#[derive(Args)]
struct ProviderArgs {
    /// Embedding service base URL; requests go to `{url}/embed`.
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    /// Use the built-in hashed encoder; takes precedence over any endpoint.
    #[arg(long)]
    fallback: bool,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 42)]
    embed_seed: u64,
}

impl ProviderArgs {
    fn config(&self) -> Result<ProviderConfig> {
        let provider = match (&self.endpoint, self.fallback) {
            (_, true) => Provider::FallbackHash,
            (Some(url), false) => Provider::HttpService { url: Some(url.clone()) },
            (None, false) => {
                return Err(tabfp::Error::Config(format!(
                    "no embedding endpoint: pass --endpoint, set {ENDPOINT_ENV}, or use --fallback"
                ))
                .into())
            }
        };
        Ok(ProviderConfig {
            provider,
            d_e: self.dim,
            seed: self.embed_seed,
            ..ProviderConfig::default()
        })
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    fingerprint: PathBuf,
    /// Output `.emb.bin`; the sidecar JSON is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct CcaArgs {
    /// Ridge added to both covariance blocks.
    #[arg(long, default_value_t = 1e-6)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::MinGdRank)]
    rule: RuleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    MinGdRank,
    AlgTwo,
}

impl CcaArgs {
    fn config(&self, seed: u64) -> CcaConfig {
        CcaConfig {
            alpha: self.alpha,
            component_rule: match self.rule {
                RuleArg::MinGdRank => ComponentRule::MinGdRank,
                RuleArg::AlgTwo => ComponentRule::AlgTwoRule,
            },
            seed,
        }
    }
}

#[derive(Args)]
struct CompareArgs {
    /// Embedding file of the first dataset.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Penalized CCA with a variable-level alignment report.
    #[arg(long)]
    sparse: bool,
    /// Penalty fraction in [0, 1], or `min` for one sentence per side.
    #[arg(long, requires = "sparse", conflicts_with = "permute")]
    penalty: Option<String>,
    /// Choose the penalty by this many row permutations.
    #[arg(long, requires = "sparse")]
    permute: Option<usize>,
    /// Number of sparse components.
    #[arg(long, default_value_t = 3)]
    components: usize,
    /// Fingerprints for the alignment report; default to `<id>.fingerprint.jsonl` beside each embedding.
    #[arg(long)]
    fingerprint_a: Option<PathBuf>,
    #[arg(long)]
    fingerprint_b: Option<PathBuf>,
    /// Also write the JSON result here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    cca: CcaArgs,
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Add (or replace) one dataset.
    Add {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        fingerprint: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Pairwise CCA distances of every entry as CSV.
    BuildDistances {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cca: CcaArgs,
    },
    /// Ward D2 clustering of a distance matrix.
    Cluster {
        /// Distance CSV written by `build-distances`.
        #[arg(long)]
        distances: PathBuf,
        #[arg(long)]
        newick: PathBuf,
        /// JSON merge list.
        #[arg(long)]
        merges: PathBuf,
        /// Also report a flat cut into this many clusters.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Nearest catalog entries of an embedded dataset.
    Query {
        #[arg(long)]
        catalog: PathBuf,
        /// Embedding file of the query.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        cca: CcaArgs,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// truth_pairs.json
    #[arg(long)]
    pairs: PathBuf,
    /// Distance CSV; queries are the ids that appear in a truth pair.
    #[arg(long, required_unless_present = "assignments", conflicts_with = "assignments")]
    distances: Option<PathBuf>,
    /// JSON object of query id to retrieved rank-1 id.
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Added to every table's sampling seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory with `<id>.csv` files and truth_pairs.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Budgets; `inf` is the no-privacy baseline.
    #[arg(long, value_delimiter = ',', default_value = "inf,10,1,0.1")]
    epsilons: Vec<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<tabfp::Error>()).map(tabfp::Error::class) {
        Some(ErrorClass::Config) => 3,
        Some(ErrorClass::Internal) => 4,
        Some(ErrorClass::Input) | None => 2,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fingerprint(a) => cmd_fingerprint(a, cli.format),
        Command::Embed(a) => cmd_embed(a, cli.format),
        Command::Compare(a) => cmd_compare(a, cli.format),
        Command::Catalog(c) => cmd_catalog(c, cli.format),
        Command::Eval(a) => cmd_eval(a, cli.format),
        Command::Synth(a) => cmd_synth(a, cli.format),
        Command::Sweep(a) => cmd_sweep(a, cli.format),
    }
}

fn emit<T: Serialize>(format: Format, value: &T, table: impl FnOnce() -> String) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
        Format::Table => print!("{}", table()),
    }
    Ok(())
}

fn file_stem(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .with_context(|| format!("{} has no file name", path.display()))?;
    Ok(name.split('.').next().unwrap_or(name).to_string())
}

fn cmd_fingerprint(a: &FingerprintArgs, format: Format) -> Result<()> {
    let data = load_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let column_bounds: BTreeMap<String, (f64, f64)> = match &a.bounds {
        Some(p) => serde_json::from_slice(&fs::read(p)?).map_err(tabfp::Error::from)?,
        None => BTreeMap::new(),
    };
    let config = FingerprintConfig {
        dp_enabled: a.dp_epsilon.is_some(),
        epsilon: a.dp_epsilon.unwrap_or(1.0),
        dp_level: match a.dp_level {
            DpLevelArg::Descriptor => DpLevel::Descriptor,
            DpLevelArg::Data => DpLevel::Data,
        },
        kappa: a.kappa,
        rho: a.rho,
        seed: a.seed,
        column_bounds,
        ablation: a.ablation.into(),
        ..FingerprintConfig::default()
    };
    config.validate()?;
    let id = match &a.id {
        Some(id) => id.clone(),
        None => file_stem(&a.input)?,
    };
    let fp = tabfp::serialize::fingerprint(&id, &data, &config)?;
    save_fingerprint(&fp, &a.out)?;
    let summary = json!({
        "dataset_id": fp.dataset_id,
        "sentences": fp.len(),
        "out": a.out.display().to_string(),
    });
    emit(format, &summary, || format!("{}: {} sentences -> {}\n", fp.dataset_id, fp.len(), a.out.display()))
}

fn cmd_embed(a: &EmbedArgs, format: Format) -> Result<()> {
    let cfg = a.provider.config()?;
    let fp = load_fingerprint(&a.fingerprint).with_context(|| format!("reading {}", a.fingerprint.display()))?;
    let e = encode(&fp, &cfg)?;
    save_embedding(&e, &a.out)?;
    let summary = json!({
        "dataset_id": e.dataset_id,
        "provider_tag": e.provider_tag,
        "d_e": e.d_e(),
        "m": e.m(),
        "out": a.out.display().to_string(),
    });
    emit(format, &summary, || {
        format!("{}: {}x{} via {} -> {}\n", e.dataset_id, e.d_e(), e.m(), e.provider_tag, a.out.display())
    })
}

fn sibling_fingerprint(emb: &Path) -> Result<PathBuf> {
    let id = file_stem(emb)?;
    Ok(emb.with_file_name(format!("{id}.fingerprint.jsonl")))
}

fn cmd_compare(a: &CompareArgs, format: Format) -> Result<()> {
    let ea = load_embedding(&a.a).with_context(|| format!("reading {}", a.a.display()))?;
    let eb = load_embedding(&a.b).with_context(|| format!("reading {}", a.b.display()))?;
    if !a.sparse {
        let cfg = a.cca.config(a.seed);
        let r = cca_similarity(&ea, &eb, &cfg)?;
        let out = json!({
            "a": ea.dataset_id,
            "b": eb.dataset_id,
            "similarity": r.similarity,
            "distance": r.distance,
            "r": r.r,
            "correlations": r.correlations,
        });
        write_optional(&a.out, &out)?;
        return emit(format, &out, || {
            format!(
                "{} vs {}\nsimilarity {:.6}\ndistance   {:.6}\ncomponents {}\n",
                ea.dataset_id, eb.dataset_id, r.similarity, r.distance, r.r
            )
        });
    }
    let scfg = SparseCcaConfig {
        seed: a.seed,
        ..SparseCcaConfig::default()
    };
    let (penalty, selection) = match (&a.penalty, a.permute) {
        (Some(p), _) if p == "min" => (0.0, None),
        (Some(p), _) => (
            p.parse::<f64>().map_err(|_| tabfp::Error::Config(format!("penalty `{p}` is not a number or `min`")))?,
            None,
        ),
        (None, Some(n)) => {
            let sel = permutation_penalty(&ea, &eb, n, &DEFAULT_PENALTY_GRID, &scfg)?;
            (sel.penalty_u, Some(sel))
        }
        (None, None) => bail!(tabfp::Error::Config("--sparse needs --penalty or --permute".into())),
    };
    let comps = sparse_cca(&ea, &eb, penalty, penalty, a.components, &scfg)?;
    let fa = match &a.fingerprint_a {
        Some(p) => p.clone(),
        None => sibling_fingerprint(&a.a)?,
    };
    let fb = match &a.fingerprint_b {
        Some(p) => p.clone(),
        None => sibling_fingerprint(&a.b)?,
    };
    let fp_a = load_fingerprint(&fa).with_context(|| format!("reading {}", fa.display()))?;
    let fp_b = load_fingerprint(&fb).with_context(|| format!("reading {}", fb.display()))?;
    let report = explain_alignment(&comps, &fp_a, &fp_b)?;
    let mut out = serde_json::to_value(&report)?;
    out["penalty"] = json!(penalty);
    if let Some(sel) = &selection {
        out["penalty_scores"] = json!(sel
            .scores
            .iter()
            .map(|(c, rho, z)| json!({"penalty": c, "rho": rho, "z": z}))
            .collect::<Vec<_>>());
    }
    write_optional(&a.out, &out)?;
    emit(format, &out, || {
        let mut s = format!("{} vs {} (penalty {penalty})\n", report.pair.0, report.pair.1);
        for c in &report.components {
            let side = |v: &[tabfp::similarity::WeightedVariable]| {
                v.iter().map(|w| format!("{}:{:.4}", w.variable, w.weight)).collect::<Vec<_>>().join(" ")
            };
            s += &format!("{:>2}  rho {:.6}  a[{}]  b[{}]\n", c.order, c.rho, side(&c.side_a), side(&c.side_b));
        }
        s
    })
}

fn write_optional(path: &Option<PathBuf>, value: &serde_json::Value) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, serde_json::to_string_pretty(value)? + "\n")?;
    }
    Ok(())
}

fn cmd_catalog(c: &CatalogCommand, format: Format) -> Result<()> {
    match c {
        CatalogCommand::Add {
            catalog,
            fingerprint,
            embedding,
        } => {
            let fp = load_fingerprint(fingerprint).with_context(|| format!("reading {}", fingerprint.display()))?;
            let e = load_embedding(embedding).with_context(|| format!("reading {}", embedding.display()))?;
            let mut cat = Catalog::open_or_create(catalog)?;
            cat.add(&fp, &e)?;
            let out = json!({"added": fp.dataset_id, "entries": cat.len()});
            emit(format, &out, || format!("added {} ({} entries)\n", fp.dataset_id, cat.len()))
        }
        CatalogCommand::BuildDistances { catalog, out, cca } => {
            let cat = Catalog::load(catalog)?;
            let dm = cat.distance_matrix(&cca.config(42))?;
            dm.write_csv(fs::File::create(out)?)?;
            let summary = json!({"entries": dm.len(), "out": out.display().to_string()});
            emit(format, &summary, || format!("{} x {} distances -> {}\n", dm.len(), dm.len(), out.display()))
        }
        CatalogCommand::Cluster {
            distances,
            newick,
            merges,
            k,
        } => {
            let dm = DistanceMatrix::read_csv(fs::File::open(distances)?)?;
            let tree = ward_d2(&dm)?;
            fs::write(newick, tree.to_newick() + "\n")?;
            fs::write(merges, tree.to_json()? + "\n")?;
            let clusters = match k {
                Some(k) => Some(
                    dm.labels
                        .iter()
                        .cloned()
                        .zip(tree.cut(*k)?)
                        .collect::<BTreeMap<String, usize>>(),
                ),
                None => None,
            };
            let out = json!({"leaves": dm.len(), "merges": tree.merges.len(), "clusters": clusters});
            emit(format, &out, || {
                let mut s = format!("{} leaves, {} merges\n", dm.len(), tree.merges.len());
                for (id, c) in clusters.iter().flatten() {
                    s += &format!("{id}\t{c}\n");
                }
                s
            })
        }
        CatalogCommand::Query { catalog, input, k, cca } => {
            let cat = Catalog::load(catalog)?;
            let q = load_embedding(input).with_context(|| format!("reading {}", input.display()))?;
            let r = query_top_k(&q, &cat.embeddings()?, *k, &cca.config(42))?;
            emit(format, &r, || {
                let mut s = format!("query {}\n", r.query_id);
                for (i, n) in r.neighbors.iter().enumerate() {
                    s += &format!("{:>3}  {}  {:.6}\n", i + 1, n.dataset_id, n.distance);
                }
                s
            })
        }
    }
}

fn cmd_eval(a: &EvalArgs, format: Format) -> Result<()> {
    let truth = TruthPairs::load(&a.pairs)?;
    let assignments: BTreeMap<String, String> = match (&a.distances, &a.assignments) {
        (Some(d), _) => {
            let dm = DistanceMatrix::read_csv(fs::File::open(d)?)?;
            let queries = truth.queries();
            nearest_neighbors(&dm).into_iter().filter(|(q, _)| queries.contains(q)).collect()
        }
        (None, Some(p)) => serde_json::from_slice(&fs::read(p)?).map_err(tabfp::Error::from)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    let p1 = precision_at_1(&assignments, &truth.pairs)?;
    let out = json!({"p_at_1": p1, "queries": assignments.len(), "assignments": assignments});
    emit(format, &out, || format!("P@1 {p1}\n"))
}

fn cmd_synth(a: &SynthArgs, format: Format) -> Result<()> {
    let mut specs = default_catalog();
    for s in &mut specs {
        s.seed += a.seed_offset;
    }
    let truth = generate_catalog(&specs, &a.out)?;
    let out = json!({"tables": specs.len(), "pairs": truth.pairs.len(), "out": a.out.display().to_string()});
    emit(format, &out, || {
        format!("{} tables, {} twin pairs -> {}\n", specs.len(), truth.pairs.len(), a.out.display())
    })
}

fn cmd_sweep(a: &SweepArgs, format: Format) -> Result<()> {
    let truth = TruthPairs::load(a.data.join("truth_pairs.json"))?;
    let mut csvs: Vec<PathBuf> = fs::read_dir(&a.data)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    csvs.retain(|p| p.extension().is_some_and(|x| x == "csv"));
    csvs.sort();
    let datasets = csvs
        .iter()
        .map(|p| Ok((file_stem(p)?, load_csv(p).with_context(|| format!("reading {}", p.display()))?)))
        .collect::<Result<Vec<_>>>()?;
    let epsilons = a
        .epsilons
        .iter()
        .map(|e| match e.as_str() {
            "inf" => Ok(None),
            s => s
                .parse::<f64>()
                .map(Some)
                .map_err(|_| tabfp::Error::Config(format!("epsilon `{s}` is not a number or `inf`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = SweepConfig {
        epsilons,
        fingerprint: FingerprintConfig {
            seed: a.seed,
            ..FingerprintConfig::default()
        },
        k_clusters: a.k,
        ..SweepConfig::default()
    };
    let report = run_dp_sweep(&datasets, &truth, &cfg, Some(&a.out))?;
    let summary: Vec<_> = report
        .levels
        .iter()
        .map(|l| json!({"epsilon": l.epsilon, "ari_vs_baseline": l.ari_vs_baseline, "p_at_1": l.p_at_1}))
        .collect();
    emit(format, &summary, || {
        let mut s = String::from("epsilon  ARI      P@1\n");
        for l in &report.levels {
            s += &format!("{:<8} {:.4}   {:.4}\n", l.epsilon, l.ari_vs_baseline, l.p_at_1);
        }
        s
    })
}
