use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::{Format, RunConfig};
use super::output::{line_plot, write_json, write_text, Csv, Series};
use super::CliError;
use crate::eigen::{dense_spectrum, lowest_eigenpair};
use crate::exceptional::{correlate, find_exceptional_points, scan_real_axis, CorrelationRow, EpConfig, SearchBox};
use crate::flow::{detect_fixed_points, integrate_flow_ode, run_discrete_flow, FixedPoint, FixedPointKind, OdeTrack};
use crate::model::{build_model, HamiltonianModel, ModelWarning};
use crate::thermal::{beta_limit_check, run_thermal_flow, trotter_partition};

type Out = Result<(), CliError>;

fn model_of(cfg: &RunConfig) -> Result<HamiltonianModel, CliError> {
    for w in cfg.model.warnings() {
        match w {
            ModelWarning::DegenerateSpectrum { index, value } => {
                log::warn!("unperturbed levels {index} and {} coincide at {value}", index + 1)
            }
        }
    }
    // invalid user-supplied matrices are a configuration problem
    build_model(&cfg.model).map_err(|e| CliError::Config(e.to_string()))
}

fn bundle(command: &str, cfg: &RunConfig, model: &HamiltonianModel, results: Value) -> Value {
    json!({
        "command": command,
        "config": cfg,
        "model_fingerprint": model.fingerprint(),
        "results": results,
    })
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

fn emit_csv(cfg: &RunConfig, name: &str, csv: Csv) -> Out {
    if cfg.writes(Format::Csv) {
        write_text(&cfg.output.dir, name, &csv.into_string())?;
    }
    Ok(())
}

fn emit_json(cfg: &RunConfig, value: &Value) -> Out {
    if cfg.writes(Format::Json) {
        write_json(&cfg.output.dir, "summary.json", value)?;
    }
    Ok(())
}

pub fn spectrum(cfg: &RunConfig, _svg: bool) -> Out {
    let model = model_of(cfg)?;
    let h = model.hamiltonian_matrix(None);
    let full = dense_spectrum(&h)?;
    let pair = lowest_eigenpair(&h, &cfg.eigen)?;

    let mut csv = Csv::new(&["index", "eigenvalue"]);
    for (i, e) in full.eigenvalues.iter().enumerate() {
        csv.row(vec![i.into(), (*e).into()]);
    }
    emit_csv(cfg, "spectrum.csv", csv)?;
    let mut csv = Csv::new(&["index", "amplitude"]);
    for (i, a) in pair.vector.iter().enumerate() {
        csv.row(vec![i.into(), (*a).into()]);
    }
    emit_csv(cfg, "ground_state.csv", csv)?;

    let results = json!({
        "dimension": model.dim(),
        "g": model.g(),
        "eigenvalues": full.eigenvalues.as_slice(),
        "lambda1": pair.lambda1,
        "ground_state": pair.vector.as_slice(),
        "residual_norm": pair.residual_norm,
    });
    emit_json(cfg, &bundle("spectrum", cfg, &model, results))
}

fn fixed_point_csv(points: &[FixedPoint]) -> Csv {
    let mut csv = Csv::new(&["x", "g", "kind", "x_end", "dlambda_dg"]);
    for fp in points {
        let (kind, x_end) = match fp.kind {
            FixedPointKind::Crossing => ("crossing", None),
            FixedPointKind::SustainedZero { x_end } => ("sustained_zero", Some(x_end)),
        };
        csv.row(vec![
            fp.x.into(),
            fp.g.into(),
            kind.into(),
            x_end.into(),
            fp.dlambda_dg.into(),
        ]);
    }
    csv
}

fn ode_csv(track: Option<&OdeTrack>) -> Csv {
    let mut csv = Csv::new(&["x", "g_ode", "rhs"]);
    if let Some(t) = track {
        for i in 0..t.g_ode.len() {
            csv.row(vec![
                t.x_grid[i].into(),
                t.g_ode[i].into(),
                t.rhs_values.get(i).copied().into(),
            ]);
        }
    }
    csv
}

pub fn flow(cfg: &RunConfig, svg: bool) -> Out {
    cfg.check_k_min("flow.k_min", cfg.flow.k_min)?;
    let model = model_of(cfg)?;
    let traj = run_discrete_flow(&model, &cfg.flow_config())?;
    let (track, ode_error) = match integrate_flow_ode(&traj, &cfg.ode_config()) {
        Ok(mut t) => {
            t.fixed_points = detect_fixed_points(&t, cfg.flow.fixed_point_tol, Some(&model));
            (Some(t), None)
        }
        Err(e) => {
            log::warn!("continuum flow not integrated: {e}");
            (None, Some(e.to_string()))
        }
    };

    let variant = cfg.flow.variant.as_str();
    let mut csv = Csv::new(&[
        "k_from",
        "k_to",
        "g_in",
        "g_out",
        "root1_re",
        "root1_im",
        "root2_re",
        "root2_im",
        "selection",
        "residual",
        "lambda_target",
        "lambda_after",
        "drift",
        "a",
        "b",
        "c",
        "variant",
    ]);
    for s in &traj.steps {
        csv.row(vec![
            s.k_from.into(),
            s.k_to.into(),
            s.g_in.into(),
            s.g_out.into(),
            s.roots.0.re.into(),
            s.roots.0.im.into(),
            s.roots.1.re.into(),
            s.roots.1.im.into(),
            s.root_selection.as_str().into(),
            s.constraint_residual.into(),
            s.lambda_target.into(),
            s.lambda_after.into(),
            s.drift.into(),
            s.coefficients.a.into(),
            s.coefficients.b.into(),
            s.coefficients.c.into(),
            variant.into(),
        ]);
    }
    emit_csv(cfg, "trajectory.csv", csv)?;
    emit_csv(cfg, "ode_track.csv", ode_csv(track.as_ref()))?;

    let mut csv = Csv::new(&["k", "g", "drift", "naive_drift"]);
    for (&k, &naive) in traj.naive_drift_of_k.iter().rev() {
        csv.row(vec![
            k.into(),
            traj.g_of_k.get(&k).copied().into(),
            traj.drift_of_k.get(&k).copied().into(),
            naive.into(),
        ]);
    }
    emit_csv(cfg, "drift.csv", csv)?;
    let fixed: &[FixedPoint] = track.as_ref().map_or(&[], |t| &t.fixed_points);
    emit_csv(cfg, "fixed_points.csv", fixed_point_csv(fixed))?;

    if svg {
        let discrete: Vec<(f64, f64)> = traj.g_of_k.iter().map(|(&k, &g)| (k as f64, g)).collect();
        let mut series = vec![Series {
            label: "discrete g(k)",
            points: discrete,
            markers: true,
        }];
        if let Some(t) = &track {
            series.push(Series {
                label: "continuum g(x)",
                points: t.x_grid.iter().copied().zip(t.g_ode.iter().copied()).collect(),
                markers: false,
            });
        }
        write_text(
            &cfg.output.dir,
            "g_vs_k.svg",
            &line_plot("Running coupling", "k", "g", &series),
        )?;
        let log10 = |d: f64| d.max(1e-300).log10();
        let series = [
            Series {
                label: "renormalized",
                points: traj.drift_of_k.iter().map(|(&k, &d)| (k as f64, log10(d))).collect(),
                markers: true,
            },
            Series {
                label: "fixed coupling",
                points: traj
                    .naive_drift_of_k
                    .iter()
                    .map(|(&k, &d)| (k as f64, log10(d)))
                    .collect(),
                markers: true,
            },
        ];
        write_text(
            &cfg.output.dir,
            "drift_vs_k.svg",
            &line_plot("Ground-state drift", "k", "log10 |lambda1(k) - lambda1(N)|", &series),
        )?;
    }

    let results = json!({
        "dimension": traj.dimension,
        "k_min": traj.k_min,
        "last_k": traj.last_k(),
        "lambda1_target": traj.lambda1_target,
        "g_initial": traj.initial_coupling(),
        "g_final": traj.g_of_k.get(&traj.last_k()),
        "breakdown_at": traj.breakdown_at,
        "breakdown_reason": traj.breakdown_reason,
        "steps": to_value(&traj.steps),
        "drift_of_k": to_value(&traj.drift_of_k),
        "naive_drift_of_k": to_value(&traj.naive_drift_of_k),
        "ode_track": track.as_ref().map(to_value),
        "ode_error": ode_error,
    });
    emit_json(cfg, &bundle("flow", cfg, &model, results))
}

pub fn thermal(cfg: &RunConfig, svg: bool) -> Out {
    cfg.check_k_min("thermal.k_min", cfg.thermal.k_min)?;
    let model = model_of(cfg)?;
    let tcfg = cfg.thermal_config();
    // surfaces an unstable Trotter kernel before any work is done
    trotter_partition(&model, tcfg.beta, tcfg.n, None)?;
    let traj = run_thermal_flow(&model, cfg.thermal.k_min, &tcfg)?;
    let gaps = beta_limit_check(&model, &cfg.thermal.betas)?;

    let mut csv = Csv::new(&["k", "beta", "n", "g_in", "g_out", "Z_target", "Z_matched", "residual"]);
    for s in &traj.steps {
        csv.row(vec![
            s.k_to.into(),
            s.beta.into(),
            s.n.into(),
            s.g_in.into(),
            s.g_out.into(),
            s.z_target.into(),
            s.z_matched.into(),
            s.residual.into(),
        ]);
    }
    emit_csv(cfg, "thermal_trajectory.csv", csv)?;
    let mut csv = Csv::new(&["beta", "free_energy", "lambda1", "gap"]);
    for r in &gaps {
        csv.row(vec![
            r.beta.into(),
            r.free_energy.into(),
            r.lambda1.into(),
            r.gap.into(),
        ]);
    }
    emit_csv(cfg, "gap_table.csv", csv)?;
    let monotone = gaps.windows(2).all(|w| w[1].gap <= w[0].gap);

    if svg {
        let series = [Series {
            label: "thermal g(k)",
            points: traj.g_of_k.iter().map(|(&k, &g)| (k as f64, g)).collect(),
            markers: true,
        }];
        write_text(
            &cfg.output.dir,
            "g_vs_k.svg",
            &line_plot("Thermal running coupling", "k", "g", &series),
        )?;
    }

    let results = json!({
        "dimension": traj.dimension,
        "k_min": traj.k_min,
        "beta": traj.beta,
        "n": traj.n,
        "breakdown_at": traj.breakdown_at,
        "breakdown_reason": traj.breakdown_reason,
        "steps": to_value(&traj.steps),
        "gap_table": to_value(&gaps),
        "gap_monotone": monotone,
    });
    emit_json(cfg, &bundle("thermal", cfg, &model, results))
}

/// Reads `x,g_ode,rhs` rows written by the `flow` command.
fn read_ode_track(path: &Path) -> Result<OdeTrack, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| bad(format!("missing column `{name}`")))
    };
    let (cx, cg, cr) = (col("x")?, col("g_ode")?, col("rhs")?);
    let mut track = OdeTrack {
        x_grid: vec![],
        g_ode: vec![],
        rhs_values: vec![],
        fixed_points: vec![],
        singular_at: None,
    };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |c: usize| -> Result<f64, CliError> {
            f.get(c)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {} column {c} is not a number", i + 2)))
        };
        track.x_grid.push(num(cx)?);
        track.g_ode.push(num(cg)?);
        track.rhs_values.push(num(cr)?);
    }
    Ok(track)
}

fn fixed_points_for_correlation(
    cfg: &RunConfig,
    model: &HamiltonianModel,
) -> Result<Option<Vec<FixedPoint>>, CliError> {
    if let Some(path) = &cfg.exceptional.flow_track {
        let track = read_ode_track(path)?;
        return Ok(Some(detect_fixed_points(&track, cfg.flow.fixed_point_tol, Some(model))));
    }
    if cfg.check_k_min("flow.k_min", cfg.flow.k_min).is_err() {
        return Ok(None);
    }
    let attempt = run_discrete_flow(model, &cfg.flow_config()).and_then(|t| integrate_flow_ode(&t, &cfg.ode_config()));
    match attempt {
        Ok(track) => Ok(Some(detect_fixed_points(&track, cfg.flow.fixed_point_tol, Some(model)))),
        Err(e) => {
            log::info!("no flow to correlate against: {e}");
            Ok(None)
        }
    }
}

pub fn exceptional(cfg: &RunConfig, svg: bool) -> Out {
    let model = model_of(cfg)?;
    let b = cfg.exceptional.search_box;
    let search_box = SearchBox::new(b[0], b[1], b[2], b[3]).map_err(|e| CliError::Config(e.to_string()))?;
    let ep_cfg = EpConfig {
        grid: cfg.exceptional.grid,
        seed_levels: cfg.exceptional.seed_levels,
        ..EpConfig::default()
    };
    let search = find_exceptional_points(&model, &search_box, &ep_cfg);
    let ex = &cfg.exceptional;
    let crossings = scan_real_axis(&model, ex.scan_min, ex.scan_max, ex.scan_steps)?;
    let fixed = fixed_points_for_correlation(cfg, &model)?;
    let rows: Vec<CorrelationRow> = fixed
        .as_ref()
        .map_or(Vec::new(), |f| correlate(f, &search.points, &crossings));

    let mut csv = Csv::new(&[
        "ge_re",
        "ge_im",
        "lambda_re",
        "lambda_im",
        "f_res",
        "dfdl_res",
        "pair_i",
        "pair_j",
    ]);
    for p in &search.points {
        csv.row(vec![
            p.g_e.re.into(),
            p.g_e.im.into(),
            p.lambda_e.re.into(),
            p.lambda_e.im.into(),
            p.f_residual.into(),
            p.dfdl_residual.into(),
            p.pair_indices.0.into(),
            p.pair_indices.1.into(),
        ]);
    }
    emit_csv(cfg, "exceptional_points.csv", csv)?;
    let mut csv = Csv::new(&["g", "min_gap", "is_avoided_min", "is_degenerate"]);
    for (g, gap, avoided, degenerate) in crossings.rows() {
        csv.row(vec![g.into(), gap.into(), avoided.into(), degenerate.into()]);
    }
    emit_csv(cfg, "crossings.csv", csv)?;
    let mut csv = Csv::new(&[
        "x",
        "g_fixed",
        "nearest_degeneracy",
        "degeneracy_distance",
        "nearest_avoided_min",
        "avoided_min_distance",
        "nearest_ep_re",
        "ep_distance",
        "dlambda_dg",
    ]);
    for r in &rows {
        csv.row(vec![
            r.x.into(),
            r.g_fixed.into(),
            r.nearest_degeneracy.into(),
            r.degeneracy_distance.into(),
            r.nearest_avoided_min.into(),
            r.avoided_min_distance.into(),
            r.nearest_ep_re.into(),
            r.ep_distance.into(),
            r.dlambda_dg.into(),
        ]);
    }
    emit_csv(cfg, "correlation.csv", csv)?;

    if svg {
        let series = [Series {
            label: "minimum level gap",
            points: crossings
                .scan_grid
                .iter()
                .copied()
                .zip(crossings.gap_of_g.iter().copied())
                .collect(),
            markers: false,
        }];
        write_text(
            &cfg.output.dir,
            "gap_vs_g.svg",
            &line_plot("Level gap on the real axis", "g", "gap", &series),
        )?;
    }

    let results = json!({
        "search": to_value(&search),
        "crossings": to_value(&crossings),
        "fixed_points": fixed.as_ref().map(to_value),
        "correlation": to_value(&rows),
    });
    emit_json(cfg, &bundle("exceptional", cfg, &model, results))
}
