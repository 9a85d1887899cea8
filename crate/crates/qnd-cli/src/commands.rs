//! Implementations of the six subcommands. Every command writes its
//! outputs plus a provenance file echoing the fully resolved
//! configuration; re-running with the same configuration rewrites every
//! file byte-identically.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qudit_qnd::nalgebra::DMatrix;

use qudit_qnd::io as qio;
use qudit_qnd::nmr;
use qudit_qnd::{
    ancilla_sweep, build_extended_hamiltonian, compound_in_out, extract_generator, fit_quadrupole,
    fractional_power, overlap_matrices, simulate_ar, simulate_rr, transition_couple,
    transition_decouple, ProtocolKind, QuadrupoleTensor, Result, SimResult, TransitionMatrix,
};

use crate::config::{InOutOrder, OutputFormat, Settings};

/// One tunnel-cycle matrix in the configured event order, raised to the
/// configured tunnel-event count.
fn build_t_cycle(s: &Settings, b0: f64) -> Result<TransitionMatrix> {
    let p = s.physical_params()?.with_b0(b0);
    let es = build_extended_hamiltonian(&p, &s.quadrupole()?, s.spin_quantum()?)?;
    let tc = transition_couple(&es)?;
    let td = transition_decouple(&es)?;
    let in_out = match s.in_out_order()? {
        InOutOrder::DecoupleAfterCouple => compound_in_out(&tc, &td)?,
        InOutOrder::CoupleAfterDecouple => compound_in_out(&td, &tc)?,
    };
    fractional_power(&in_out, s.kappa()?)
}

pub struct CommandContext {
    pub name: &'static str,
    pub settings: Settings,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
}

impl CommandContext {
    pub fn new(name: &'static str, settings: Settings) -> Result<Self> {
        let output_dir = settings.output_dir()?;
        let format = settings.format()?;
        std::fs::create_dir_all(&output_dir)?;
        Ok(Self {
            name,
            settings,
            output_dir,
            format,
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }

    fn provenance(&self) -> Value {
        json!({
            "artifact": {
                "name": "qnd",
                "version": env!("CARGO_PKG_VERSION"),
            },
            "command": self.name,
            "config": self.settings.echo(),
        })
    }

    fn write_provenance(&self) -> Result<()> {
        let path = self.path(&format!("{}_provenance.json", self.name.replace('-', "_")));
        qio::write_json(BufWriter::new(File::create(&path)?), &self.provenance())?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_matrix(
        &self,
        stem: &str,
        labels: &[f64],
        data: &DMatrix<f64>,
        convention: &str,
        kappa: Option<f64>,
    ) -> Result<()> {
        if self.format.writes_csv() {
            let path = self.path(&format!("{stem}.csv"));
            qio::write_matrix_csv(BufWriter::new(File::create(&path)?), labels, data)?;
            println!("wrote {}", path.display());
        }
        if self.format.writes_json() {
            let doc = qio::matrix_json(labels, data, convention, kappa, self.provenance());
            let path = self.path(&format!("{stem}.json"));
            qio::write_json(BufWriter::new(File::create(&path)?), &doc)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn write_summary(&self, summary: Value) -> Result<()> {
        let path = self.path(&format!("{}_summary.json", self.name.replace('-', "_")));
        qio::write_json(BufWriter::new(File::create(&path)?), &summary)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

pub fn cmd_overlaps(ctx: &CommandContext) -> Result<()> {
    let s = &ctx.settings;
    let es =
        build_extended_hamiltonian(&s.physical_params()?, &s.quadrupole()?, s.spin_quantum()?)?;
    let ov = overlap_matrices(&es);
    let labels = es.quantum().m_values();

    ctx.write_matrix(
        "overlap_down",
        &labels,
        &ov.down,
        "row-eigenstate-squared-overlap",
        None,
    )?;
    ctx.write_matrix(
        "overlap_up",
        &labels,
        &ov.up,
        "row-eigenstate-squared-overlap",
        None,
    )?;
    ctx.write_matrix(
        "overlap_empty",
        &labels,
        &ov.empty,
        "row-eigenstate-squared-overlap",
        None,
    )?;

    let admixture = qudit_qnd::system::max_flip_flop_admixture(&es);
    ctx.write_summary(json!({
        "max_flip_flop_admixture": admixture,
        "min_diagonal_overlap": {
            "down": (0..labels.len()).map(|k| ov.down[(k, k)]).fold(f64::MAX, f64::min),
            "up": (0..labels.len()).map(|k| ov.up[(k, k)]).fold(f64::MAX, f64::min),
            "empty": (0..labels.len()).map(|k| ov.empty[(k, k)]).fold(f64::MAX, f64::min),
        },
    }))?;
    ctx.write_provenance()?;
    println!("max flip-flop admixture: {admixture:.3e}");
    Ok(())
}

fn stochasticity_residual(t: &TransitionMatrix) -> f64 {
    (0..t.dimension())
        .map(|c| (t.matrix().column(c).sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn cmd_transitions(ctx: &CommandContext) -> Result<()> {
    let s = &ctx.settings;
    let sq = s.spin_quantum()?;
    let q = s.quadrupole()?;
    let kappa = s.kappa()?;
    let b0_list = s.b0_list()?;
    let multi = b0_list.len() > 1;

    let mut report = Vec::new();
    for &b0 in &b0_list {
        let p = s.physical_params()?.with_b0(b0);
        let es = build_extended_hamiltonian(&p, &q, sq)?;
        let tc = transition_couple(&es)?;
        let td = transition_decouple(&es)?;
        let tio = match s.in_out_order()? {
            InOutOrder::DecoupleAfterCouple => compound_in_out(&tc, &td)?,
            InOutOrder::CoupleAfterDecouple => compound_in_out(&td, &tc)?,
        };
        let tq = fractional_power(&tio, kappa)?;

        let suffix = if multi {
            format!("_b0_{b0}")
        } else {
            String::new()
        };
        let conv = "column-stochastic";
        ctx.write_matrix(
            &format!("t_couple{suffix}"),
            tc.labels(),
            tc.matrix(),
            conv,
            None,
        )?;
        ctx.write_matrix(
            &format!("t_decouple{suffix}"),
            td.labels(),
            td.matrix(),
            conv,
            None,
        )?;
        ctx.write_matrix(
            &format!("t_in_out{suffix}"),
            tio.labels(),
            tio.matrix(),
            conv,
            None,
        )?;
        ctx.write_matrix(
            &format!("t_qnd{suffix}"),
            tq.labels(),
            tq.matrix(),
            conv,
            Some(kappa),
        )?;

        let mut worst_off_diag: f64 = 0.0;
        for r in 0..tq.dimension() {
            for c in 0..tq.dimension() {
                if r != c {
                    worst_off_diag = worst_off_diag.max(tq.prob(r, c));
                }
            }
        }
        report.push(json!({
            "b0_tesla": b0,
            "stochasticity_residual": {
                "t_couple": stochasticity_residual(&tc),
                "t_decouple": stochasticity_residual(&td),
                "t_in_out": stochasticity_residual(&tio),
                "t_qnd": stochasticity_residual(&tq),
            },
            "max_off_diagonal_t_qnd": worst_off_diag,
        }));
    }

    ctx.write_summary(json!({ "kappa": kappa, "fields": report }))?;
    ctx.write_provenance()?;
    Ok(())
}

pub fn cmd_simulate(ctx: &CommandContext) -> Result<()> {
    let s = &ctx.settings;
    let seed = s.seed()?;
    let n_trials: u64 = s.parse_or("n_trials", 100_000)?;
    let kinds = s.protocol_kinds()?;

    let b0 = *s
        .b0_list()?
        .first()
        .expect("b0_list validated by physical_params");
    let t_cycle = build_t_cycle(s, b0)?;

    if let Some(grid) = s.ancilla_grid()? {
        let shots = s.shots_list("1..8")?;
        let points = ancilla_sweep(&t_cycle, &kinds, &shots, &grid, n_trials, seed)?;
        if ctx.format.writes_csv() {
            let path = ctx.path("sweep.csv");
            qio::write_sweep_csv(BufWriter::new(File::create(&path)?), &points)?;
            println!("wrote {}", path.display());
        }
        if ctx.format.writes_json() {
            let doc = json!({
                "points": points,
                "n_trials": n_trials,
                "seed": seed,
                "provenance": ctx.provenance(),
            });
            let path = ctx.path("sweep.json");
            qio::write_json(BufWriter::new(File::create(&path)?), &doc)?;
            println!("wrote {}", path.display());
        }
        ctx.write_provenance()?;
        return Ok(());
    }

    let anc = s.ancilla()?;
    if anc.is_inverted() {
        eprintln!(
            "warning: p_tp ({}) below p_fp ({}); detector responds inversely",
            anc.p_tp, anc.p_fp
        );
    }
    let shots = s.shots_list("3")?;
    let mut rows: Vec<(ProtocolKind, usize, SimResult)> = Vec::new();
    for &kind in &kinds {
        for &n in &shots {
            let cfg = s.protocol_config(kind, n)?;
            let result = match kind {
                ProtocolKind::Rr => simulate_rr(&t_cycle, &anc, &cfg, n_trials, seed)?,
                ProtocolKind::Ar => simulate_ar(&t_cycle, &anc, &cfg, n_trials, seed)?,
            };
            println!(
                "{kind} n_shots={n}: fidelity {:.5} +- {:.5}, mean cycles {:.3}{}",
                result.fidelity_avg,
                result.fidelity_stderr,
                result.mean_qnd_cycles,
                result
                    .rejection_rate
                    .map_or(String::new(), |r| format!(", rejection {r:.4}")),
            );
            rows.push((kind, n, result));
        }
    }

    if ctx.format.writes_csv() {
        let path = ctx.path("simulate_results.csv");
        qio::write_sim_results_csv(BufWriter::new(File::create(&path)?), &rows)?;
        println!("wrote {}", path.display());
    }
    if ctx.format.writes_json() {
        let entries: Vec<Value> = rows
            .iter()
            .map(|(kind, n, r)| {
                json!({
                    "protocol": kind,
                    "n_shots": n,
                    "result": r,
                })
            })
            .collect();
        let doc = json!({
            "runs": entries,
            "ancilla": anc,
            "provenance": ctx.provenance(),
        });
        let path = ctx.path("simulate_results.json");
        qio::write_json(BufWriter::new(File::create(&path)?), &doc)?;
        println!("wrote {}", path.display());
    }
    ctx.write_provenance()?;
    Ok(())
}

pub fn cmd_extract_generator(ctx: &CommandContext, input: &Path) -> Result<()> {
    let s = &ctx.settings;
    let n_tunnel: f64 = s.parse_or("n_tunnel", 201.0)?;

    let (labels, data) = qio::read_matrix_csv(File::open(input)?)?;
    let t_obs = TransitionMatrix::new(data, labels)?;
    let gen = extract_generator(&t_obs, n_tunnel)?;
    let bare = gen.compound(1.0)?;

    // round-trip diagnostic: compound the repaired generator back up
    let forward = gen.compound(n_tunnel)?;
    let resid = (forward.matrix() - t_obs.matrix())
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max);

    ctx.write_matrix("generator", gen.labels(), gen.matrix(), "generator", None)?;
    ctx.write_matrix(
        "t_bare",
        bare.labels(),
        bare.matrix(),
        "column-stochastic",
        None,
    )?;
    ctx.write_summary(json!({
        "n_tunnel": n_tunnel,
        "input": input.display().to_string(),
        "adjusted_mass_per_column": gen.adjusted_mass_per_column(),
        "regularization_warning": gen.regularization_warning(),
        "round_trip_residual": resid,
    }))?;
    ctx.write_provenance()?;
    if gen.regularization_warning() {
        eprintln!(
            "warning: generator regularization removed more than 1e-3 of rate mass in some column"
        );
    }
    println!("round-trip residual after compounding to {n_tunnel}: {resid:.3e}");
    Ok(())
}

pub fn cmd_fit_quadrupole(ctx: &CommandContext, input: &Path) -> Result<()> {
    let s = &ctx.settings;
    let p0 = s.physical_params()?;
    let charge = s.charge_state()?;
    let fit_larmor: bool = s.parse_or("fit_larmor", false)?;
    let init = QuadrupoleTensor::new(
        s.parse_or("init_qxx_khz", 0.0)?,
        s.parse_or("init_qyy_khz", 0.0)?,
        s.parse_or("init_qyz_khz", 0.0)?,
        s.parse_or("init_qxz_khz", 0.0)?,
        s.parse_or("init_qxy_khz", 0.0)?,
    );

    let data = qio::read_spectra_csv(File::open(input)?, charge)?;
    let fit = fit_quadrupole(&data, &p0, &init, fit_larmor)?;

    let doc = qio::quadrupole_fit_json(&fit, ctx.provenance());
    let path = ctx.path("fit.json");
    qio::write_json(BufWriter::new(File::create(&path)?), &doc)?;
    println!("wrote {}", path.display());

    if ctx.format.writes_csv() {
        // plot-ready model curve at the data angles
        let sq = qudit_qnd::SpinQuantum::new(data.dimension())?;
        let p_model = match fit.larmor_khz {
            Some((larmor, _)) => {
                let mut p = p0;
                p.gamma_n_khz_per_t = larmor / p0.b0_tesla;
                p
            }
            None => p0,
        };
        let model =
            nmr::nmr_frequencies_at_angles(&p_model, &fit.tensor, sq, charge, &data.angles_rad)?;
        let path = ctx.path("fit_model.csv");
        qio::write_model_curve_csv(
            BufWriter::new(File::create(&path)?),
            &data.angles_rad,
            &model,
        )?;
        println!("wrote {}", path.display());
    }

    ctx.write_provenance()?;
    println!(
        "fitted tensor (kHz): qxx {:.3} qyy {:.3} qyz {:.3} qxz {:.3} qxy {:.3}; residual rms {:.4} kHz",
        fit.tensor.qxx_khz,
        fit.tensor.qyy_khz,
        fit.tensor.qyz_khz,
        fit.tensor.qxz_khz,
        fit.tensor.qxy_khz,
        fit.residual_rms_khz
    );
    Ok(())
}

pub fn cmd_synth_spectra(ctx: &CommandContext) -> Result<()> {
    let s = &ctx.settings;
    let p = s.physical_params()?;
    let q = s.quadrupole()?;
    let sq = s.spin_quantum()?;
    let charge = s.charge_state()?;
    let noise: f64 = s.parse_or("noise_sigma_khz", 0.5)?;
    let angles_deg = s.angles_deg("0..180:19")?;
    let angles_rad: Vec<f64> = angles_deg.iter().map(|d| d.to_radians()).collect();

    let set = nmr::synth_spectra(&p, &q, sq, charge, &angles_rad, noise, s.seed()?)?;

    if ctx.format.writes_csv() {
        let path = ctx.path("spectra.csv");
        qio::write_spectra_csv(BufWriter::new(File::create(&path)?), &set)?;
        println!("wrote {}", path.display());
    }
    if ctx.format.writes_json() {
        let doc = json!({
            "spectra": set,
            "provenance": ctx.provenance(),
        });
        let path = ctx.path("spectra.json");
        qio::write_json(BufWriter::new(File::create(&path)?), &doc)?;
        println!("wrote {}", path.display());
    }
    ctx.write_provenance()?;
    Ok(())
}
