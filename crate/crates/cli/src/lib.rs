//! `irgen` command-line driver.
//!
//! Every subcommand reads a run configuration (`--config`, defaults when
//! omitted) with `--set section.key=value` overrides, writes its outputs
//! under `data.artifacts` and leaves a `manifest-<command>.json` next to them.
//! Exit codes: 0 success, 2 configuration error, 3 data error, 1 otherwise.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use irgen::dataset::{LabeledDataset, Split};
use irgen::eval::{
    fresh_data_protocol, results_pr_curve, run_ablation, scan_rows, score_results, throughput_bench, write_bench_tsv,
    write_curve_csv, Engine,
};
use irgen::io::{self, IdTable, Manifest, RunConfig};
use irgen::search::{build_ivfpq, search_ivfpq, search_threads, write_results_tsv, RetrievalResult};
use irgen::seqmodel::{train_ar, PairData};
use irgen::tokenizer::train_tokenizer;
use irgen::{Error, IdTrie};
use log::info;

#[derive(Debug, Parser)]
#[command(name = "irgen", version, about = "Generative retrieval over embedding vectors")]
struct Cli {
    /// Run configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set ar.epochs=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SearchEngine {
    Generative,
    Scan,
    Ivfpq,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the Gaussian-blob benchmark to the configured data paths.
    Synth,
    /// Train the tokenizer on the train split.
    Tokenize,
    /// Assign identifiers to the gallery with the configured scheme.
    AssignIds,
    /// Train the autoregressive scorer on the assigned identifiers.
    TrainAr,
    /// Build the IVF-PQ baseline index over the gallery.
    BuildIndex,
    /// Retrieve for every query row and write ranked results.
    Search {
        #[arg(long, value_enum, default_value = "generative")]
        engine: SearchEngine,
    },
    /// Score the generative engine and the exact scan on the query split.
    Eval,
    /// Train and score the identifier-scheme and length grid.
    Ablate,
    /// Index held-out gallery rows without retraining and compare.
    FreshData,
    /// Beam-width latency sweep of the trained generative engine.
    Bench {
        /// Comma-separated beam widths; defaults to `eval.bench_beams`.
        #[arg(long, value_delimiter = ',')]
        beam: Vec<usize>,
    },
    /// Print the configuration schema.
    Schema,
    /// Print the effective configuration.
    ShowConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Tokenize => "tokenize",
            Command::AssignIds => "assign-ids",
            Command::TrainAr => "train-ar",
            Command::BuildIndex => "build-index",
            Command::Search { .. } => "search",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::FreshData => "fresh-data",
            Command::Bench { .. } => "bench",
            Command::Schema => "schema",
            Command::ShowConfig => "show-config",
        }
    }
}

/// Exit code of a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::NonFinite { .. }
        | Error::Parse { .. }
        | Error::Format { .. }
        | Error::InvalidRow { .. }
        | Error::Io { .. } => 3,
        _ => 1,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    manifest: Manifest,
    dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn dataset(&mut self) -> irgen::Result<LabeledDataset> {
        let d = &self.cfg.data;
        let t0 = Instant::now();
        let ds = io::load_dataset(&d.embeddings, &d.labels, &d.splits, d.num_classes)?;
        self.manifest.time("load_dataset", t0.elapsed().as_secs_f64());
        Ok(ds)
    }

    fn write(&mut self, role: &str, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> irgen::Result<PathBuf> {
        let path = self.path(name);
        let io_err = |e| Error::Io {
            path: path.clone(),
            source: e,
        };
        let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err)?);
        f(&mut w).map_err(io_err)?;
        drop(w);
        self.manifest.artifact(role, &path);
        Ok(path)
    }

    fn json<T: serde::Serialize>(&mut self, role: &str, name: &str, value: &T) -> irgen::Result<()> {
        let text = serde_json::to_string_pretty(value).expect("report serialises");
        self.write(role, name, |w| std::io::Write::write_all(w, text.as_bytes()))?;
        Ok(())
    }

    /// Generative engine from the saved tokenizer, identifiers and scorer.
    fn engine(&mut self, ds: &LabeledDataset) -> irgen::Result<Engine> {
        let tokenizer = io::load_tokenizer(self.path("tokenizer.bin"))?;
        let table = io::load_ids(self.path("ids.bin"))?;
        let scorer = io::load_scorer(self.path("scorer.bin"))?;
        let features = tokenizer.embed(ds.embeddings())?;
        Engine::from_parts(self.cfg.identifiers.scheme, tokenizer, features, table.rows, table.ids, scorer)
    }
}

fn ensure_parent(p: &Path) -> irgen::Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn query_ids(rows: &[usize], results: Vec<RetrievalResult>) -> Vec<(String, RetrievalResult)> {
    rows.iter().map(|r| r.to_string()).zip(results).collect()
}

fn execute(cli: &Cli) -> irgen::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&io::schema()).expect("schema serialises"));
            return Ok(());
        }
        Command::ShowConfig => {
            println!("{}", cfg.to_json());
            return Ok(());
        }
        _ => {}
    }
    let dir = cfg.data.artifacts.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut ctx = Ctx {
        manifest: Manifest::new(cli.command.name(), &cfg),
        cfg,
        dir,
    };
    let t0 = Instant::now();
    dispatch(&cli.command, &mut ctx)?;
    ctx.manifest.time("total", t0.elapsed().as_secs_f64());
    let path = ctx.path(&format!("manifest-{}.json", cli.command.name()));
    ctx.manifest.save(&path)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn dispatch(cmd: &Command, ctx: &mut Ctx) -> irgen::Result<()> {
    match cmd {
        Command::Synth => {
            let ds = io::make_synthetic(&ctx.cfg.data.synthetic)?;
            let d = ctx.cfg.data.clone();
            for p in [&d.embeddings, &d.labels, &d.splits] {
                ensure_parent(p)?;
            }
            io::save_dataset(&ds, &d.embeddings, &d.labels, &d.splits)?;
            ctx.manifest.artifact("embeddings", &d.embeddings);
            ctx.manifest.artifact("labels", &d.labels);
            ctx.manifest.artifact("splits", &d.splits);
        }
        Command::Tokenize => {
            let ds = ctx.dataset()?;
            let t0 = Instant::now();
            let trained = train_tokenizer(&ds, &ctx.cfg.tokenizer)?;
            ctx.manifest.time("train_tokenizer", t0.elapsed().as_secs_f64());
            let path = ctx.path("tokenizer.bin");
            io::save_tokenizer(&path, &trained.tokenizer)?;
            ctx.manifest.artifact("tokenizer", &path);
            let log = trained.loss_log.clone();
            ctx.write("tokenizer_loss", "tokenizer_loss.tsv", |w| {
                use std::io::Write;
                writeln!(w, "epoch\tloss")?;
                log.iter().enumerate().try_for_each(|(i, l)| writeln!(w, "{}\t{l}", i + 1))
            })?;
        }
        Command::AssignIds => {
            let ds = ctx.dataset()?;
            let tokenizer = io::load_tokenizer(ctx.path("tokenizer.bin"))?;
            let engine_cfg = ctx.cfg.engine();
            let scheme = ctx.cfg.identifiers.scheme;
            let features = tokenizer.embed(ds.embeddings())?;
            let rows = ds.indices(Split::Gallery);
            let ids = irgen::eval::assign_identifiers(scheme, &engine_cfg, &tokenizer, &features, &rows)?;
            let vocab = irgen::eval::scheme_vocab(scheme, &engine_cfg)?;
            let table = IdTable { vocab, rows, ids };
            let trie = IdTrie::build(vocab, &table.ids, &(0..table.rows.len()).collect::<Vec<_>>())?;
            info!("{} gallery rows, {} distinct {scheme} identifiers", table.rows.len(), trie.num_leaves());
            let path = ctx.path("ids.bin");
            io::save_ids(&path, &table)?;
            ctx.manifest.artifact("ids", &path);
        }
        Command::TrainAr => {
            let ds = ctx.dataset()?;
            let tokenizer = io::load_tokenizer(ctx.path("tokenizer.bin"))?;
            let table = io::load_ids(ctx.path("ids.bin"))?;
            let features = tokenizer.embed(ds.embeddings())?;
            let mut queries = ds.indices(Split::Train);
            queries.extend(&table.rows);
            queries.sort_unstable();
            queries.dedup();
            let pairs = PairData {
                features: &features,
                labels: ds.labels(),
                queries: &queries,
                targets: &table.rows,
                ids: &table.ids,
                vocab: table.vocab,
            };
            let t0 = Instant::now();
            let trained = train_ar(&pairs, &ctx.cfg.ar)?;
            ctx.manifest.time("train_ar", t0.elapsed().as_secs_f64());
            let path = ctx.path("scorer.bin");
            io::save_scorer(&path, &trained.scorer)?;
            ctx.manifest.artifact("scorer", &path);
            let log = trained.loss_history.clone();
            ctx.write("ar_loss", "ar_loss.tsv", |w| {
                use std::io::Write;
                writeln!(w, "epoch\tnll")?;
                log.iter().enumerate().try_for_each(|(i, l)| writeln!(w, "{}\t{l}", i + 1))
            })?;
        }
        Command::BuildIndex => {
            let ds = ctx.dataset()?;
            let gallery = ds.embeddings().select(&ds.indices(Split::Gallery))?;
            let t0 = Instant::now();
            let index = build_ivfpq(&gallery, &ctx.cfg.search.ivfpq)?;
            ctx.manifest.time("build_index", t0.elapsed().as_secs_f64());
            let path = ctx.path("index.bin");
            io::save_index(&path, &index)?;
            ctx.manifest.artifact("index", &path);
        }
        Command::Search { engine } => {
            let ds = ctx.dataset()?;
            let queries = ds.indices(Split::Query);
            let s = ctx.cfg.search.clone();
            let t0 = Instant::now();
            let results = match engine {
                SearchEngine::Generative => ctx.engine(&ds)?.search_rows(&queries, s.beam_width, s.k, search_threads())?,
                SearchEngine::Scan => scan_rows(ds.embeddings(), &ds.indices(Split::Gallery), &queries, s.metric, s.k)?,
                SearchEngine::Ivfpq => {
                    let index = io::load_index(ctx.path("index.bin"))?;
                    let gallery = ds.indices(Split::Gallery);
                    if index.len() != gallery.len() {
                        return Err(Error::Format {
                            path: ctx.path("index.bin"),
                            reason: format!("index holds {} rows, gallery has {}", index.len(), gallery.len()),
                        });
                    }
                    let n_probe = s.ivfpq.n_probe();
                    queries
                        .iter()
                        .map(|&q| {
                            search_ivfpq(&index, ds.embeddings().row(q), n_probe, s.k).map(|mut r| {
                                r.hits.iter_mut().for_each(|h| h.row = gallery[h.row]);
                                r
                            })
                        })
                        .collect::<irgen::Result<Vec<_>>>()?
                }
            };
            ctx.manifest.time("search", t0.elapsed().as_secs_f64());
            let name = format!("results-{}.tsv", format!("{engine:?}").to_lowercase());
            let rows = query_ids(&queries, results);
            ctx.write("results", &name, |w| write_results_tsv(w, &rows))?;
        }
        Command::Eval => {
            let ds = ctx.dataset()?;
            let queries = ds.indices(Split::Query);
            let s = ctx.cfg.search.clone();
            let e = ctx.cfg.eval.clone();
            let t0 = Instant::now();
            let engine = ctx.engine(&ds)?;
            let generative = engine.search_rows(&queries, s.beam_width, s.k, search_threads())?;
            let scan = scan_rows(ds.embeddings(), &ds.indices(Split::Gallery), &queries, s.metric, s.k)?;
            ctx.manifest.time("search", t0.elapsed().as_secs_f64());
            let reports = [
                ("generative", score_results(&ds, &queries, &generative, &e)),
                ("scan", score_results(&ds, &queries, &scan, &e)),
            ];
            ctx.write("metrics", "metrics.tsv", |w| {
                use std::io::Write;
                writeln!(w, "engine\tmetric\tvalue")?;
                for (name, r) in &reports {
                    for (col, v) in r.columns() {
                        writeln!(w, "{name}\t{col}\t{v:.6}")?;
                    }
                }
                Ok(())
            })?;
            let summary: serde_json::Map<String, serde_json::Value> = reports
                .iter()
                .map(|(n, r)| (n.to_string(), serde_json::to_value(r).expect("report serialises")))
                .collect();
            ctx.json("metrics_json", "metrics.json", &summary)?;
            let pr: Vec<(f64, f64)> = results_pr_curve(&ds, &queries, &generative)
                .iter()
                .map(|p| (p.recall, p.precision))
                .collect();
            ctx.write("pr_curve", "pr_curve.csv", |w| write_curve_csv(w, "recall", "precision", &pr))?;
            let mrr: Vec<(f64, f64)> = reports[0].1.mrr.iter().map(|&(k, v)| (k as f64, v)).collect();
            ctx.write("mrr_curve", "mrr_curve.csv", |w| write_curve_csv(w, "k", "mrr", &mrr))?;
        }
        Command::Ablate => {
            let ds = ctx.dataset()?;
            let t0 = Instant::now();
            let report = run_ablation(&ds, &ctx.cfg.engine(), &ctx.cfg.search, &ctx.cfg.eval)?;
            ctx.manifest.time("ablation", t0.elapsed().as_secs_f64());
            ctx.write("ablation", "ablation.tsv", |w| report.write_tsv(w))?;
            ctx.json("ablation_json", "ablation.json", &report)?;
        }
        Command::FreshData => {
            let ds = ctx.dataset()?;
            let t0 = Instant::now();
            let report = fresh_data_protocol(&ds, &ctx.cfg.engine(), &ctx.cfg.search, &ctx.cfg.eval, None)?;
            ctx.manifest.time("fresh_data", t0.elapsed().as_secs_f64());
            ctx.write("fresh_data", "fresh_data.tsv", |w| report.write_tsv(w))?;
            ctx.json("fresh_data_json", "fresh_data.json", &report)?;
        }
        Command::Bench { beam } => {
            let ds = ctx.dataset()?;
            let engine = ctx.engine(&ds)?;
            let beams = if beam.is_empty() { ctx.cfg.eval.bench_beams.clone() } else { beam.clone() };
            if beams.contains(&0) {
                return Err(Error::Config {
                    key: "--beam".into(),
                    reason: "beam widths must be at least 1".into(),
                });
            }
            let mut queries = ds.indices(Split::Query);
            queries.truncate(ctx.cfg.eval.bench_queries.max(1));
            let t0 = Instant::now();
            let rows = throughput_bench(&engine, &queries, &beams, ctx.cfg.search.k, ctx.cfg.eval.bench_repeats)?;
            ctx.manifest.time("bench", t0.elapsed().as_secs_f64());
            ctx.write("bench", "bench.tsv", |w| write_bench_tsv(w, &rows))?;
        }
        Command::Schema | Command::ShowConfig => unreachable!("handled before dispatch"),
    }
    Ok(())
}
