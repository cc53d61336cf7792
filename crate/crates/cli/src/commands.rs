use std::fs;
use std::path::{Path, PathBuf};

use jackstraw_core::engine::{default_b, default_s, input_digest, json_digest, NullPoolSummary};
use jackstraw_core::io::{format_f64, read_matrix, read_plain_matrix, write_data_matrix, write_matrix};
use jackstraw_core::significance::{fdr, EnrichmentResult};
use jackstraw_core::sim::{generate_study, run_joint_null_evaluation, run_two_pc_evaluation, write_report};
use jackstraw_core::{
    compute_pca, rank_sum_enrichment, run_delete_s, run_jackstraw_checkpointed, scree_data,
    top_pcs, CheckpointOptions, DataMatrix, EvaluationReport, HypothesisSpec,
    JackstrawConfig, JackstrawResult, Method, PValueMethod, ScenarioConfig,
};
use serde::Serialize;

use crate::config::{require, RunConfig};
use crate::error::{with_path, CliError, CliResult};

pub(crate) fn dispatch(cfg: &RunConfig) -> CliResult<()> {
    let command = require(&cfg.command, "command")?;
    match command.as_str() {
        "pca" => cmd_pca(cfg),
        "jackstraw" => cmd_jackstraw(cfg),
        "delete-s" | "delete_s" => cmd_delete_s(cfg),
        "simulate" => cmd_simulate(cfg),
        "evaluate" => cmd_evaluate(cfg),
        "enrich" => cmd_enrich(cfg),
        other => Err(CliError::Config(format!("unknown command '{other}'"))),
    }
}

/// Written next to every command's outputs.
#[derive(Serialize)]
struct RunProvenance<'a> {
    command: &'a str,
    library_version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_digest: Option<String>,
    config_digest: String,
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    centered_internally: Option<bool>,
    config: &'a RunConfig,
}

fn output_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = require(&cfg.output_dir, "output_dir")?.clone();
    with_path(&dir, fs::create_dir_all(&dir))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(jackstraw_core::Error::from)? + "\n";
    with_path(path, fs::write(path, text))
}

fn write_provenance(
    dir: &Path,
    cfg: &RunConfig,
    input: Option<&DataMatrix>,
    seed: Option<u64>,
    centered: Option<bool>,
) -> CliResult<()> {
    let prov = RunProvenance {
        command: cfg.command.as_deref().unwrap_or_default(),
        library_version: env!("CARGO_PKG_VERSION"),
        input_digest: input.map(input_digest),
        config_digest: json_digest(cfg),
        seed,
        centered_internally: centered,
        config: cfg,
    };
    write_json(&dir.join("provenance.json"), &prov)
}

fn read_input(cfg: &RunConfig) -> CliResult<DataMatrix> {
    Ok(read_matrix(require(&cfg.input_path, "input_path")?)?)
}

fn pc_ids(r: usize) -> Vec<String> {
    (1..=r).map(|k| format!("PC{k}")).collect()
}

fn cmd_pca(cfg: &RunConfig) -> CliResult<()> {
    let mat = read_input(cfg)?;
    let r = *require(&cfg.r, "r")?;
    let dec = compute_pca(&mat, r)?;
    let dir = output_dir(cfg)?;
    let ids = pc_ids(r);
    write_matrix(&dir.join("vt_r.tsv"), "pc", &ids, mat.col_ids(), &top_pcs(&dec))?;
    write_matrix(&dir.join("u_r.tsv"), "id", mat.row_ids(), &ids, &dec.loadings())?;
    let mut scree = String::from("pc\tpct_variance\n");
    for (k, pct) in scree_data(&dec) {
        scree.push_str(&format!("{k}\t{}\n", format_f64(pct)));
    }
    let path = dir.join("scree.tsv");
    with_path(&path, fs::write(&path, scree))?;
    write_provenance(&dir, cfg, Some(&mat), None, Some(dec.centered_internally))
}

fn hypothesis(cfg: &RunConfig) -> CliResult<HypothesisSpec> {
    let r = cfg.r.unwrap_or(1);
    let mut spec = match &cfg.tested_pcs {
        Some(tested) => HypothesisSpec::subset(r, tested.clone()),
        None => HypothesisSpec::full(r),
    };
    if let Some(path) = &cfg.rotation_path {
        spec = spec.with_rotation(&read_plain_matrix(path)?);
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct Summary<'a> {
    method: &'a str,
    negative_control: bool,
    rows: usize,
    pi0_hat: f64,
    fdr_threshold: f64,
    significant: usize,
    config: &'a JackstrawConfig,
    null_pool: Option<&'a NullPoolSummary>,
}

fn write_results(
    dir: &Path,
    cfg: &RunConfig,
    method: &str,
    mat: &DataMatrix,
    config: &JackstrawConfig,
    res: &JackstrawResult,
) -> CliResult<()> {
    let threshold = cfg.fdr()?;
    let fdr = fdr(&res.p_values)?;
    let mut body = String::from("row_id\tF\tp\tq\n");
    for (i, id) in mat.row_ids().iter().enumerate() {
        body.push_str(&format!(
            "{id}\t{}\t{}\t{}\n",
            format_f64(res.observed_f[i]),
            format_f64(res.p_values[i]),
            format_f64(fdr.q_values[i])
        ));
    }
    let path = dir.join("pvalues.tsv");
    with_path(&path, fs::write(&path, body))?;

    let summary = Summary {
        method,
        negative_control: res.negative_control,
        rows: mat.nrows(),
        pi0_hat: fdr.pi0_hat,
        fdr_threshold: threshold,
        significant: fdr.q_values.iter().filter(|q| **q <= threshold).count(),
        config,
        null_pool: res.null_pool.as_ref(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_provenance(
        dir,
        cfg,
        Some(mat),
        Some(config.seed),
        Some(res.provenance.centered_internally),
    )
}

fn cmd_jackstraw(cfg: &RunConfig) -> CliResult<()> {
    let threshold = cfg.fdr()?;
    let mat = read_input(cfg)?;
    let spec = hypothesis(cfg)?;
    let m = mat.nrows();
    let s = cfg.s.unwrap_or_else(|| default_s(m));
    let b = cfg.b.unwrap_or_else(|| default_b(m, s));
    let mut config = JackstrawConfig::new(s, b, cfg.seed(), spec);
    config.null_mode = cfg.null_mode.unwrap_or_default();
    config.pseudocount = cfg.pseudocount.unwrap_or(false);
    let checkpoint = cfg.checkpoint_path.as_ref().map(|path| CheckpointOptions {
        path: path.clone(),
        every: cfg.checkpoint_every.unwrap_or(b.div_ceil(10)),
    });
    let dir = output_dir(cfg)?;
    log::info!("jackstraw: m = {m}, s = {s}, B = {b}, FDR {threshold}");
    let res = run_jackstraw_checkpointed(&mat, &config, checkpoint.as_ref())?;
    write_results(&dir, cfg, "jackstraw", &mat, &config, &res)
}

fn cmd_delete_s(cfg: &RunConfig) -> CliResult<()> {
    cfg.fdr()?;
    let mat = read_input(cfg)?;
    let spec = hypothesis(cfg)?;
    let s = cfg.s.unwrap_or_else(|| default_s(mat.nrows()));
    let config = JackstrawConfig::new(s, 1, cfg.seed(), spec);
    let dir = output_dir(cfg)?;
    log::warn!("delete-s is a negative control; its p-values are not valid");
    let res = run_delete_s(&mat, &config)?;
    write_results(&dir, cfg, "delete-s", &mat, &config, &res)
}

fn scenario(id: &str, cfg: &RunConfig) -> CliResult<ScenarioConfig> {
    let mut sc = ScenarioConfig::by_id(id)?;
    if let Some(seed) = cfg.seed {
        sc.seed = seed;
    }
    if let Some(k) = cfg.studies {
        sc.studies = k;
    }
    sc.validate()?;
    Ok(sc)
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let id = cfg.scenario.as_deref().unwrap_or("1");
    let sc = scenario(id, cfg)?;
    let index = cfg.study_index.unwrap_or(0);
    let study = generate_study(&sc, index)?;
    let dir = output_dir(cfg)?;
    write_data_matrix(&dir.join("y.tsv"), &study.y)?;

    let r = study.b_true.ncols();
    let mut truth = String::from("row_id\tnull");
    for k in 1..=r {
        truth.push_str(&format!("\tb{k}"));
    }
    truth.push('\n');
    for (i, id) in study.y.row_ids().iter().enumerate() {
        truth.push_str(&format!("{id}\t{}", u8::from(study.true_null_mask[i])));
        for k in 0..r {
            truth.push_str(&format!("\t{}", format_f64(study.b_true[(i, k)])));
        }
        truth.push('\n');
    }
    let path = dir.join("truth.tsv");
    with_path(&path, fs::write(&path, truth))?;
    let ids: Vec<String> = (1..=r).map(|k| format!("L{k}")).collect();
    write_matrix(&dir.join("latent.tsv"), "latent", &ids, study.y.col_ids(), &study.l_true)?;
    write_json(&dir.join("scenario.json"), &sc)?;
    write_provenance(&dir, cfg, Some(&study.y), Some(sc.seed), None)
}

fn methods(cfg: &RunConfig, sc: &ScenarioConfig) -> CliResult<Vec<Method>> {
    let names = cfg.methods.clone().unwrap_or_else(|| {
        vec!["conventional".into(), "jackstraw".into(), "delete-s".into()]
    });
    let s = cfg.s.unwrap_or_else(|| default_s(sc.m));
    let b = cfg.b.unwrap_or_else(|| default_b(sc.m, s));
    let mut out = Vec::new();
    for name in names {
        match name.as_str() {
            "conventional" | "conventional-f" => out.push(Method::ConventionalF),
            "jackstraw" => out.push(Method::Jackstraw { s, b }),
            "delete-s" | "delete_s" => {
                let sizes = cfg.delete_s_sizes.clone().unwrap_or_else(|| vec![s]);
                out.extend(sizes.into_iter().map(|s| Method::DeleteS { s }));
            }
            other => return Err(CliError::Config(format!("unknown method '{other}'"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no methods selected".into()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvaluationIndexRow {
    scenario: String,
    method: String,
    studies: usize,
    failed: usize,
    double_ks_p: Option<f64>,
    double_ks_two_sided_p: Option<f64>,
    mean_d_plus: f64,
    mean_null_ecdf_005: f64,
    mean_pi0_hat: f64,
}

fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let ids: Vec<String> = if cfg.all_16 == Some(true) {
        (1..=16).map(|k| k.to_string()).collect()
    } else if cfg.two_pc == Some(true) {
        vec!["2pc".into()]
    } else {
        vec![require(&cfg.scenario, "scenario")?.clone()]
    };
    let dir = output_dir(cfg)?;
    let mut index = Vec::new();
    for id in &ids {
        let sc = scenario(id, cfg)?;
        let methods = methods(cfg, &sc)?;
        let refs: Vec<&dyn PValueMethod> = methods.iter().map(|m| m as &dyn PValueMethod).collect();
        log::info!("scenario {id}: {sc}, {} studies", sc.studies);
        let report: EvaluationReport = if id == "2pc" {
            run_two_pc_evaluation(&sc, &refs)?
        } else {
            run_joint_null_evaluation(id, &sc, &refs)?
        };
        write_report(&dir.join(format!("scenario_{id}")), &report)?;
        for m in &report.methods {
            index.push(EvaluationIndexRow {
                scenario: id.clone(),
                method: m.label.clone(),
                studies: m.studies.len(),
                failed: m.failed.len(),
                double_ks_p: m.double_ks.as_ref().map(|k| k.p_value),
                double_ks_two_sided_p: m.double_ks_two_sided.as_ref().map(|k| k.p_value),
                mean_d_plus: m.mean_d_plus,
                mean_null_ecdf_005: m.mean_null_ecdf_005,
                mean_pi0_hat: m.mean_pi0_hat,
            });
        }
    }
    let mut tsv = String::from(
        "scenario\tmethod\tstudies\tfailed\tdouble_ks_p\tdouble_ks_two_sided_p\tmean_d_plus\tmean_null_ecdf_005\tmean_pi0_hat\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), format_f64);
    for row in &index {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.scenario,
            row.method,
            row.studies,
            row.failed,
            opt(row.double_ks_p),
            opt(row.double_ks_two_sided_p),
            format_f64(row.mean_d_plus),
            format_f64(row.mean_null_ecdf_005),
            format_f64(row.mean_pi0_hat)
        ));
    }
    let path = dir.join("summary.tsv");
    with_path(&path, fs::write(&path, tsv))?;
    write_provenance(&dir, cfg, None, cfg.seed, None)
}

fn read_lines(path: &Path) -> CliResult<Vec<(usize, String)>> {
    let text = with_path(path, fs::read_to_string(path))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

/// `id<TAB or comma>score` lines; a first line whose score does not parse
/// is taken as a header.
fn read_scores(path: &Path) -> CliResult<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (k, (line, text)) in read_lines(path)?.into_iter().enumerate() {
        let fields: Vec<&str> = text.split(['\t', ',']).map(str::trim).collect();
        let bad = |message: String| CliError::Input {
            path: path.to_path_buf(),
            line,
            message,
        };
        if fields.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", fields.len())));
        }
        match fields[1].parse::<f64>() {
            Ok(v) if v.is_finite() => out.push((fields[0].to_string(), v)),
            Ok(_) => return Err(bad(format!("'{}' is not finite", fields[1]))),
            Err(_) if k == 0 => {}
            Err(_) => return Err(bad(format!("'{}' is not a number", fields[1]))),
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct EnrichmentReport {
    members: usize,
    nonmembers: usize,
    seed: u64,
    #[serde(flatten)]
    result: EnrichmentResult,
}

fn cmd_enrich(cfg: &RunConfig) -> CliResult<()> {
    let scores = read_scores(require(&cfg.scores_path, "scores_path")?)?;
    let members: std::collections::BTreeSet<String> = read_lines(require(&cfg.members_path, "members_path")?)?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    let known: std::collections::BTreeSet<&str> = scores.iter().map(|(id, _)| id.as_str()).collect();
    let missing: Vec<&String> = members.iter().filter(|m| !known.contains(m.as_str())).collect();
    if !missing.is_empty() {
        return Err(CliError::Config(format!("member ids without scores: {missing:?}")));
    }
    let (inside, outside): (Vec<_>, Vec<_>) = scores.iter().partition(|(id, _)| members.contains(id));
    let inside: Vec<f64> = inside.into_iter().map(|(_, v)| *v).collect();
    let outside: Vec<f64> = outside.into_iter().map(|(_, v)| *v).collect();
    let seed = cfg.seed();
    let result = rank_sum_enrichment(&inside, &outside, cfg.permutations.unwrap_or(10_000), seed)?;
    let dir = output_dir(cfg)?;
    write_json(
        &dir.join("enrichment.json"),
        &EnrichmentReport {
            members: inside.len(),
            nonmembers: outside.len(),
            seed,
            result,
        },
    )?;
    write_provenance(&dir, cfg, None, Some(seed), None)
}
