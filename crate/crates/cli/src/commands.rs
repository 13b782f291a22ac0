//! Implementations behind the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use vptag::synthbench::{comparison_table, run_metric_comparison};
use vptag::training::{decode_domain, train, Checkpoint, ModelParams};
use vptag::{
    dataset_stats, episode_f1, error_types, load_contextual_store, load_static_table,
    parse_domain_file, pooled_f1, Averaging, DomainFile, EmbeddingProvider, ErrorCounts,
    ProviderDescriptor, Table,
};

use crate::config::{RunConfig, SynthBenchConfig};
use crate::{CliError, Format};

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_domain(path: &Path) -> Result<DomainFile, CliError> {
    let text = read_file(path)?;
    parse_domain_file(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Builds a usable provider from a checkpoint or config descriptor,
/// reading any referenced files.
pub fn resolve_provider(descriptor: &ProviderDescriptor) -> Result<EmbeddingProvider, CliError> {
    match descriptor {
        ProviderDescriptor::Hashed { dim, seed } => {
            if *dim == 0 {
                return Err(CliError::Config("hashed provider needs dim >= 1".into()));
            }
            Ok(EmbeddingProvider::Hashed(vptag::HashedConfig {
                dim: *dim,
                seed: *seed,
            }))
        }
        ProviderDescriptor::Static { path, oov } => {
            let text = read_file(Path::new(path))?;
            let table = load_static_table(&text, *oov)
                .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            Ok(EmbeddingProvider::Static(table))
        }
        ProviderDescriptor::Contextual { path } => {
            let text = read_file(Path::new(path))?;
            let store = load_contextual_store(&text)
                .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            Ok(EmbeddingProvider::Contextual(store))
        }
    }
}

fn emit(out: Option<&PathBuf>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    metric: Option<String>,
    out: &Path,
) -> Result<(), CliError> {
    let text = read_file(config_path)?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    // Flags win over the file.
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    if let Some(metric) = metric {
        config.model.metric = metric;
    }

    let metric = config.metric()?;
    let provider = resolve_provider(&config.embeddings)?;
    let sources = config
        .data
        .train
        .iter()
        .map(|p| load_domain(Path::new(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let validation = load_domain(Path::new(&config.data.validation))?;

    let head_dim = config.model.head.then(|| provider.dim());
    let params = ModelParams::new(metric, head_dim);
    let (best, history) = train(&params, &sources, &validation, &provider, &config.train)
        .map_err(CliError::from)?;

    let checkpoint = Checkpoint::from_params(&best, config.embeddings.clone(), config.train.clone());
    write_file(out, &checkpoint.to_json_pretty())?;

    let mut tsv = String::from("pass\tmean_loss\tval_f1\n");
    for row in &history {
        tsv.push_str(&format!("{}\t{:?}\t{:?}\n", row.pass, row.mean_loss, row.val_f1));
    }
    let history_path = PathBuf::from(format!("{}.history.tsv", out.display()));
    write_file(&history_path, &tsv)?;
    log::info!(
        "saved checkpoint to {} and history to {}",
        out.display(),
        history_path.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParams), CliError> {
    let checkpoint = Checkpoint::from_json(&read_file(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let params = checkpoint.to_params().map_err(CliError::from)?;
    Ok((checkpoint, params))
}

fn check_dimensions(params: &ModelParams, provider: &EmbeddingProvider) -> Result<(), CliError> {
    let expected = params.head.as_ref().map_or(provider.dim(), |h| h.d_in());
    if expected != provider.dim() {
        return Err(CliError::Data(format!(
            "checkpoint expects embedding dimension {expected}, provider has {}",
            provider.dim()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint_path: &Path,
    data_path: &Path,
    errors: bool,
    finetune_steps: usize,
    format: Format,
    out: Option<&PathBuf>,
    config_path: Option<&PathBuf>,
) -> Result<(), CliError> {
    let (checkpoint, params) = load_checkpoint(checkpoint_path)?;
    let provider = resolve_provider(&checkpoint.embeddings)?;
    check_dimensions(&params, &provider)?;
    let file = load_domain(data_path)?;

    let averaging = match config_path {
        Some(path) => {
            let config: RunConfig = serde_json::from_str(&read_file(path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            config.eval.averaging
        }
        None => Averaging::default(),
    };

    let finetune = (finetune_steps > 0).then_some((finetune_steps, &checkpoint.train));
    let results = decode_domain(&params, &file, &provider, finetune).map_err(CliError::from)?;
    let (reports, macro_mean) = episode_f1(&results).map_err(CliError::from)?;
    let mean = match averaging {
        Averaging::Episode => macro_mean,
        Averaging::Pooled => pooled_f1(&results).map_err(CliError::from)?.f1,
    };

    let mut table = Table::new(vec![
        "episode", "precision", "recall", "f1", "tp", "n_pred", "n_gold",
    ]);
    for (i, report) in reports.iter().enumerate() {
        table.push_row(vec![
            i.to_string(),
            format!("{:.4}", report.precision),
            format!("{:.4}", report.recall),
            format!("{:.4}", report.f1),
            report.tp.to_string(),
            report.n_pred.to_string(),
            report.n_gold.to_string(),
        ]);
    }
    table.push_row(vec![
        "mean".into(),
        String::new(),
        String::new(),
        format!("{mean:.4}"),
        String::new(),
        String::new(),
        String::new(),
    ]);

    let mut output = render(&table, format);
    if errors {
        let mut totals = ErrorCounts::default();
        for (pred, gold) in &results {
            for (p, g) in pred.iter().zip(gold) {
                totals.add_assign(&error_types(p, g).map_err(CliError::from)?);
            }
        }
        let mut error_table = Table::new(vec!["model", "O-X", "X-O", "X-X"]);
        error_table.push_row(vec![
            checkpoint.metric.clone(),
            totals.ox.to_string(),
            totals.xo.to_string(),
            totals.xx.to_string(),
        ]);
        output.push('\n');
        output.push_str(&render(&error_table, format));
    }
    emit(out, &output)
}

pub fn cmd_decode(
    checkpoint_path: &Path,
    data_path: &Path,
    out: Option<&PathBuf>,
) -> Result<(), CliError> {
    let (checkpoint, params) = load_checkpoint(checkpoint_path)?;
    let provider = resolve_provider(&checkpoint.embeddings)?;
    check_dimensions(&params, &provider)?;
    let file = load_domain(data_path)?;

    let results = decode_domain(&params, &file, &provider, None).map_err(CliError::from)?;
    let mut output = String::from("episode\tsentence\tposition\ttoken\tgold\tpred\n");
    for (e, ((pred, _), episode)) in results.iter().zip(&file.episodes).enumerate() {
        for (s, (tags, item)) in pred.iter().zip(&episode.query).enumerate() {
            let gold = item.tags().tags();
            let tokens = item.sentence().tokens();
            for (p, (token, tag)) in tokens.iter().zip(tags.tags()).enumerate() {
                output.push_str(&format!("{e}\t{s}\t{p}\t{token}\t{}\t{tag}\n", gold[p]));
            }
        }
    }
    emit(out, &output)
}

pub fn cmd_synth_bench(
    config_path: Option<&PathBuf>,
    seeds: Option<usize>,
    metrics: &[String],
    format: Format,
    out: Option<&PathBuf>,
) -> Result<(), CliError> {
    let mut config: SynthBenchConfig = match config_path {
        Some(path) => serde_json::from_str(&read_file(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => SynthBenchConfig::default(),
    };
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    if !metrics.is_empty() {
        config.metrics = metrics.to_vec();
    }
    let kinds = config.metric_kinds()?;
    let rows = run_metric_comparison(&config.synth, &kinds, &config.train, config.seeds)
        .map_err(CliError::from)?;
    let table = comparison_table("test", &rows);
    emit(out, &render(&table, format))
}

pub fn cmd_inspect(data_path: &Path) -> Result<(), CliError> {
    let file = load_domain(data_path)?;
    let stats = dataset_stats(&file);
    print!(
        "domain\t{}\nepisodes\t{}\navg_support_size\t{:?}\nn_query_sentences\t{}\nn_labels\t{}\n",
        file.domain,
        file.episodes.len(),
        stats.avg_support_size,
        stats.n_query_sentences,
        stats.n_labels
    );
    Ok(())
}

fn render(table: &Table, format: Format) -> String {
    match format {
        Format::Tsv => table.to_tsv(),
        Format::Md => table.to_markdown(),
    }
}
