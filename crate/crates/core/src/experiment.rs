//! Experiment orchestration behind the command line front end.
//!
//! Every experiment writes fixed-schema CSV files into the output directory.
//! Sweep members are independent and may run on up to `ROTHE_THREADS` threads;
//! results are collected in sweep order, so outputs never depend on scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{ExperimentKind, ProblemChoice, RunConfig};
use crate::error::{Error, Result};
use crate::fem::{poincare_estimate, ProblemData};
use crate::mesh::{build_dof_map, build_inclusion_mesh, build_strip_mesh, BidomainMesh, DofMap, DofMode};
use crate::rothe::{
    check_estimates, energy_distance, energy_matrix, interface_distance, regularity_diagnostics, relative_drift,
    run_signorini, run_wentzell, RotheTrajectory,
};
use crate::thinlayer::{build_layer_mesh, reference_run, study_member, ThinLayerStudy};

/// Files written by an experiment and a short human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Sweep parallelism from `ROTHE_THREADS`; 0, unset or unparsable means sequential.
pub fn thread_cap() -> usize {
    std::env::var("ROTHE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Maps `f` over `items` on at most `threads` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Vec<Result<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    parts.into_iter().flatten().collect()
}

/// Runs the configured experiment, writing into `out_dir`.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let threads = thread_cap();
    match config.experiment {
        ExperimentKind::Wentzell => single_run(config, out_dir, ProblemChoice::Wentzell),
        ExperimentKind::Signorini => single_run(config, out_dir, ProblemChoice::Signorini),
        ExperimentKind::MSweep => m_sweep(config, out_dir, threads),
        ExperimentKind::Estimates => estimate_audit(config, out_dir, threads),
        ExperimentKind::ThinLayer => thin_layer(config, out_dir, threads),
        ExperimentKind::Poincare => poincare(config, out_dir, threads),
    }
}

fn dof_mode(problem: ProblemChoice) -> DofMode {
    match problem {
        ProblemChoice::Wentzell => DofMode::Continuous,
        ProblemChoice::Signorini => DofMode::Bilateral,
    }
}

fn run(problem: ProblemChoice, mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData, config: &RunConfig) -> Result<RotheTrajectory> {
    match problem {
        ProblemChoice::Wentzell => run_wentzell(mesh, dofs, data, config.vi_options()),
        ProblemChoice::Signorini => run_signorini(mesh, dofs, data, config.vi_options()),
    }
}

fn csv(dir: &Path, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(path)
}

fn e(x: f64) -> String {
    format!("{x:.16e}")
}

fn single_run(config: &RunConfig, dir: &Path, problem: ProblemChoice) -> Result<RunSummary> {
    let mesh = config.build_mesh()?;
    let dofs = build_dof_map(&mesh, dof_mode(problem))?;
    let data = config.problem_data(&mesh, config.m)?;
    let traj = run(problem, &mesh, &dofs, &data, config)?;
    let report = check_estimates(&traj, &mesh, &dofs, &data)?;
    traj.write_csv(dir, "trajectory.csv")?;
    traj.write_interface_csv(dir, "interface.csv")?;
    report.write_csv(dir, "estimates.csv")?;
    let failed = report.records.iter().filter(|r| r.pass == Some(false)).count();
    Ok(RunSummary {
        files: ["trajectory.csv", "interface.csv", "estimates.csv"].iter().map(|f| dir.join(f)).collect(),
        lines: vec![
            format!("{} run: {} DOFs, m = {}, h = {:e}", config.experiment.name(), dofs.n_dofs(), traj.m(), traj.h()),
            format!("estimate checks: {} records, {failed} failed", report.records.len()),
        ],
    })
}

fn m_sweep(config: &RunConfig, dir: &Path, threads: usize) -> Result<RunSummary> {
    let problem = config.problem;
    let mesh = config.build_mesh()?;
    let dofs = build_dof_map(&mesh, dof_mode(problem))?;
    let mut counts = config.m_list.clone();
    counts.push(config.m_ref);
    let trajs = parallel_map(&counts, threads, |&m| {
        let data = config.problem_data(&mesh, m)?;
        run(problem, &mesh, &dofs, &data, config)
    })?;
    let (members, reference) = trajs.split_at(trajs.len() - 1);
    let reference = &reference[0];
    let norm = energy_matrix(&mesh, &dofs, config.beta)?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut files = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for traj in members {
        let d = interface_distance(traj, reference)?;
        let de = energy_distance(traj, reference, &norm)?;
        let order = match prev {
            Some((h0, d0)) if d > 0.0 && d0 > 0.0 => e((d0 / d).ln() / (h0 / traj.h()).ln()),
            _ => "na".to_string(),
        };
        rows.push(format!("{},{},{},{},{order}", traj.m(), e(traj.h()), e(d), e(de)));
        lines.push(format!("m = {:>4}: distance {d:.6e}, order {order}", traj.m()));
        prev = Some((traj.h(), d));
        let name = format!("interface_m{}.csv", traj.m());
        traj.write_interface_csv(dir, &name)?;
        files.push(dir.join(name));
    }
    files.insert(
        0,
        csv(dir, "convergence.csv", "m,h,distance_L2Sigma,distance_energy,observed_order", rows)?,
    );
    Ok(RunSummary { files, lines })
}

fn estimate_audit(config: &RunConfig, dir: &Path, threads: usize) -> Result<RunSummary> {
    let problem = config.problem;
    let mesh = config.build_mesh()?;
    let dofs = build_dof_map(&mesh, dof_mode(problem))?;
    let mut counts = vec![config.m];
    counts.extend(&config.m_list);
    let results = parallel_map(&counts, threads, |&m| {
        let data = config.problem_data(&mesh, m)?;
        let traj = run(problem, &mesh, &dofs, &data, config)?;
        let report = check_estimates(&traj, &mesh, &dofs, &data)?;
        let regularity = regularity_diagnostics(&traj, &mesh, &dofs, &data)?;
        Ok((m, report, regularity))
    })?;
    let (_, main_report, _) = &results[0];
    main_report.write_csv(dir, "estimates.csv")?;
    let sweep = &results[1..];

    let mut ratio_rows = Vec::new();
    for (m, report, _) in sweep {
        for r in report.records.iter().filter(|r| r.pass.is_none()) {
            ratio_rows.push(format!("{m},{},{},{}", r.id, e(r.lhs), e(r.rhs_or_ratio)));
        }
    }
    let reg_rows = sweep.iter().map(|(m, _, g)| {
        format!(
            "{m},{},{},{},{},{}",
            e(g.compatibility_residual),
            g.guaranteed,
            g.flagged,
            e(g.derivative_l2_sigma_sq),
            e(g.sup_derivative_interface)
        )
    });
    let files = vec![
        dir.join("estimates.csv"),
        csv(dir, "estimate_sweep.csv", "m,inequality_id,lhs,ratio", ratio_rows)?,
        csv(
            dir,
            "regularity.csv",
            "m,compatibility_residual,guaranteed,flagged,derivative_L2Sigma_sq,sup_derivative_interface",
            reg_rows,
        )?,
    ];
    let failed = main_report.records.iter().filter(|r| r.pass == Some(false)).count();
    let mut lines = vec![format!("explicit estimates at m = {}: {failed} failures", config.m)];
    if !sweep.is_empty() {
        let z: Vec<f64> = sweep.iter().map(|(_, _, g)| g.derivative_l2_sigma_sq).collect();
        let s: Vec<f64> = sweep.iter().map(|(_, _, g)| g.sup_derivative_interface).collect();
        lines.push(format!(
            "derivative drift over m_list: L2(Sigma) {:.3e}, sup {:.3e} (compatible: {})",
            relative_drift(&z),
            relative_drift(&s),
            sweep.iter().all(|(_, _, g)| g.guaranteed)
        ));
    }
    Ok(RunSummary { files, lines })
}

fn thin_layer(config: &RunConfig, dir: &Path, threads: usize) -> Result<RunSummary> {
    let layers = config
        .eps_list
        .iter()
        .map(|&eps| build_layer_mesh(config.n, eps, config.gamma))
        .collect::<Result<Vec<_>>>()?;
    let plain = build_inclusion_mesh(config.n)?;
    let data = config.problem_data(&plain, config.m)?;
    let options = config.vi_options();
    let reference = reference_run(&data, config.n, options)?;
    let members: Vec<usize> = (0..layers.len()).collect();
    let results = parallel_map(&members, threads, |&k| {
        study_member(&data, config.eps_list[k], &layers[k], &reference, options)
    })?;
    let (rows, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let study = ThinLayerStudy {
        rows,
        reference,
        trajectories,
    };
    study.write_csv(dir)?;
    let mut files = vec![dir.join("thinlayer.csv")];
    files.extend((0..study.trajectories.len()).map(|k| dir.join(format!("trajectory_eps{k}.csv"))));
    let lines = study
        .rows
        .iter()
        .map(|r| format!("eps = {:.4e} ({} cells): distance {:.6e}", r.epsilon, r.band_width_cells, r.distance))
        .collect();
    Ok(RunSummary { files, lines })
}

fn poincare(config: &RunConfig, dir: &Path, threads: usize) -> Result<RunSummary> {
    let levels = [1usize, 2, 4];
    let results = parallel_map(&levels, threads, |&k| {
        let mesh = match config.geometry {
            crate::config::GeometryKind::Inclusion => build_inclusion_mesh(config.n * k)?,
            crate::config::GeometryKind::Strip => build_strip_mesh(config.nx1 * k, config.nx2 * k, config.ny * k)?,
        };
        let dofs = build_dof_map(&mesh, DofMode::Bilateral)?;
        let est = poincare_estimate(&mesh, &dofs, 1e-8, 10_000)?;
        Ok((k, mesh.n_nodes(), est))
    })?;
    if let Some((_, _, est)) = results.iter().find(|(_, _, est)| !(est.constant > 0.0)) {
        return Err(Error::numeric(format!("nonpositive Poincare constant {}", est.constant)));
    }
    let rows = results
        .iter()
        .map(|(k, nodes, est)| format!("{k},{nodes},{},{}", e(est.constant), est.iterations));
    let lines = results
        .iter()
        .map(|(k, nodes, est)| format!("refinement {k} ({nodes} nodes): C = {:.6e}", est.constant))
        .collect();
    Ok(RunSummary {
        files: vec![csv(dir, "poincare.csv", "refinement,n_nodes,constant,iterations", rows)?],
        lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..17).collect();
        let seq = parallel_map(&items, 1, |&x| Ok(x * x)).unwrap();
        let par = parallel_map(&items, 4, |&x| Ok(x * x)).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn parallel_map_propagates_errors() {
        let items = [1, 2, 3];
        let r = parallel_map(&items, 2, |&x| {
            if x == 2 {
                Err(Error::InvalidArgument("two".into()))
            } else {
                Ok(x)
            }
        });
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
