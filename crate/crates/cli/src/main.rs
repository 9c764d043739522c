//! Batch front end: prices instances, runs the penalized duals, verifies
//! the primal/dual invariants, and evaluates the risk functionals.
//!
//! One JSON instance per file; reports go to stdout as JSON (one NDJSON
//! line per file in batch mode). Exit codes: 0 success, 1 validation
//! error, 2 nonviable market, 3 solver failure.

use clap::{Args, Parser, Subcommand};
use treehedge_cli::instance::{self, Instance};
use treehedge_cli::report::{
    status_name, DualReport, InvariantCheck, IterationCounts, PriceReport, RiskReport,
    Tolerances, VerifyReport,
};
use std::path::PathBuf;
use std::process::ExitCode;
use treehedge::dual::{self, dual_price, duality_report};
use treehedge::market::{self, TreeMeasure};
use treehedge::oracle::{self, GridAxis, GridSpec};
use treehedge::primal::{accept_price, accept_price_bounded, superhedge_price};
use treehedge::risk;
use treehedge::SolveStatus;

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_NONVIABLE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "treehedge", version, about = "Hedging prices and duals on finite scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Instance files (JSON, format 1).
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Overrides the martingale-check tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the admissibility floor of the instances.
    #[arg(long)]
    floor_c: Option<f64>,
    /// Solve independent instance files with this many threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write the report(s) to a file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Superhedging and relaxed hedging prices.
    Price(CommonArgs),
    /// Penalized dual over martingale measures.
    Dual(CommonArgs),
    /// Primal/dual cross checks with per-invariant results.
    Verify(CommonArgs),
    /// Classical and robust certainty-equivalent risk of a position.
    Risk(CommonArgs),
    /// Brute-force verifiers (reproduces derived reference values).
    #[command(hide = true)]
    Oracle {
        #[command(subcommand)]
        sub: OracleCommand,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Grid search over cash and strategy coordinates.
    BruteForce(CommonArgs),
    /// Vertices of the martingale polytope.
    Vertices(CommonArgs),
    /// Sorted-tail certainty equivalent for the cvar loss.
    Cvar(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, runner): (&CommonArgs, RunFn) = match &cli.command {
        Command::Price(a) => (a, cmd_price),
        Command::Dual(a) => (a, cmd_dual),
        Command::Verify(a) => (a, cmd_verify),
        Command::Risk(a) => (a, cmd_risk),
        Command::Oracle { sub } => match sub {
            OracleCommand::BruteForce(a) => (a, cmd_oracle_brute),
            OracleCommand::Vertices(a) => (a, cmd_oracle_vertices),
            OracleCommand::Cvar(a) => (a, cmd_oracle_cvar),
        },
    };
    let results = run_batch(args, runner);
    let mut out_lines = Vec::new();
    let mut worst = EXIT_OK;
    let single = args.files.len() == 1;
    for (path, value, code) in results {
        worst = worst.max(code);
        if single {
            out_lines.push(to_pretty(&value));
        } else {
            let line = serde_json::json!({"file": path.display().to_string(), "report": value});
            out_lines.push(serde_json::to_string(&line).expect("report serializes"));
        }
    }
    let payload = out_lines.join("\n") + "\n";
    match &args.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, payload) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(EXIT_SOLVER);
            }
        }
        None => print!("{payload}"),
    }
    ExitCode::from(worst)
}

type RunFn = fn(&Instance, &CommonArgs) -> (serde_json::Value, u8);

fn run_batch(args: &CommonArgs, runner: RunFn) -> Vec<(PathBuf, serde_json::Value, u8)> {
    let jobs = args.jobs.max(1).min(args.files.len().max(1));
    if jobs <= 1 {
        return args
            .files
            .iter()
            .map(|path| {
                let (v, c) = run_one(path, args, runner);
                (path.clone(), v, c)
            })
            .collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<(serde_json::Value, u8)>> = vec![None; args.files.len()];
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= args.files.len() {
                    break;
                }
                let out = run_one(&args.files[i], args, runner);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    args.files
        .iter()
        .zip(results)
        .map(|(p, r)| {
            let (v, c) = r.expect("worker filled slot");
            (p.clone(), v, c)
        })
        .collect()
}

fn run_one(path: &PathBuf, args: &CommonArgs, runner: RunFn) -> (serde_json::Value, u8) {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return validation_error("$", &format!("cannot read {}: {e}", path.display())),
    };
    let dto = match instance::parse(&text) {
        Ok(d) => d,
        Err(e) => return validation_error(&e.path, &e.message),
    };
    let mut inst = match instance::build(&dto) {
        Ok(i) => i,
        Err(e) => return validation_error(&e.path, &e.message),
    };
    if let Some(tol) = args.tol {
        if !(tol > 0.0) {
            return validation_error("--tol", "must be positive");
        }
        inst.martingale_tol = tol;
    }
    if let Some(c) = args.floor_c {
        if c.is_nan() || c < 0.0 {
            return validation_error("--floor-c", "must be nonnegative");
        }
        inst.floor = Some(c);
    }
    runner(&inst, args)
}

fn validation_error(path: &str, message: &str) -> (serde_json::Value, u8) {
    eprintln!("validation error at {path}: {message}");
    (
        serde_json::json!({
            "format": 1,
            "status": "validation_error",
            "error": {"path": path, "message": message},
        }),
        EXIT_VALIDATION,
    )
}

fn solver_error(message: &str) -> (serde_json::Value, u8) {
    eprintln!("solver failure: {message}");
    (
        serde_json::json!({
            "format": 1,
            "status": "solver_failure",
            "error": {"message": message},
        }),
        EXIT_SOLVER,
    )
}

fn cmd_price(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    let phi = match superhedge_price(&inst.tree, &inst.pset, &inst.claim) {
        Ok(s) => s,
        Err(e) => return solver_error(&e.to_string()),
    };
    let psi = match accept_price(&inst.tree, &inst.pset, &inst.claim, &inst.spec) {
        Ok(s) => s,
        Err(e) => return solver_error(&e.to_string()),
    };
    let psi_c = match inst.floor {
        Some(c) => {
            match accept_price_bounded(&inst.tree, &inst.pset, &inst.claim, &inst.spec, c) {
                Ok(s) => Some(s),
                Err(e) => return solver_error(&e.to_string()),
            }
        }
        None => None,
    };
    let statuses = [
        phi.status,
        psi.status,
        psi_c.as_ref().map(|s| s.status).unwrap_or(SolveStatus::Optimal),
    ];
    let (status, code) = if statuses.contains(&SolveStatus::Unbounded) {
        ("nonviable", EXIT_NONVIABLE)
    } else if statuses.iter().all(|s| s.is_optimal()) {
        ("ok", EXIT_OK)
    } else {
        ("solver_failure", EXIT_SOLVER)
    };
    let report = PriceReport {
        format: 1,
        command: "price",
        status: status.into(),
        phi: phi.price.is_finite().then_some(phi.price),
        psi: psi.price.is_finite().then_some(psi.price),
        psi_c: psi_c.as_ref().and_then(|s| s.price.is_finite().then_some(s.price)),
        strategy: psi.strategy.positions().to_vec(),
        shortfall: psi.shortfall.values().to_vec(),
        tolerances: Tolerances::with_martingale(inst.martingale_tol),
        iterations: IterationCounts {
            superhedge: Some(phi.iterations),
            relaxed: Some(psi.iterations),
            floored: psi_c.as_ref().map(|s| s.iterations),
            dual: None,
        },
    };
    (serde_json::to_value(report).expect("report"), code)
}

fn cmd_dual(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    let sol = match dual_price(&inst.tree, &inst.pset, &inst.claim, &inst.spec) {
        Ok(s) => s,
        Err(e) => return solver_error(&e.to_string()),
    };
    let (status, code) = match sol.status {
        SolveStatus::Optimal => ("ok", EXIT_OK),
        SolveStatus::Infeasible => ("nonviable", EXIT_NONVIABLE),
        s => (status_name(s), EXIT_SOLVER),
    };
    let report = DualReport {
        format: 1,
        command: "dual",
        status: status.into(),
        value: sol.value.is_finite().then_some(sol.value),
        penalty: sol.penalty.is_finite().then_some(sol.penalty),
        selected_p: sol.selected_p,
        lambda: sol.lambda.clone(),
        q_leaf_probabilities: sol.leaf_probabilities.clone(),
        q_transitions: sol.measure.as_ref().map(|m| m.transitions().to_vec()),
        gap: sol.gap,
        tolerances: Tolerances::with_martingale(inst.martingale_tol),
        iterations: IterationCounts { dual: Some(sol.iterations), ..Default::default() },
    };
    (serde_json::to_value(report).expect("report"), code)
}

fn cmd_verify(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    let rep = match duality_report(&inst.tree, &inst.pset, &inst.claim, &inst.spec, inst.floor) {
        Ok(r) => r,
        Err(e) => return solver_error(&e.to_string()),
    };
    let tolerances = Tolerances::with_martingale(inst.martingale_tol);
    if rep.nonviable {
        let report = serde_json::json!({
            "format": 1,
            "command": "verify",
            "status": "nonviable",
            "tolerances": serde_json::to_value(&tolerances).unwrap(),
        });
        return (report, EXIT_NONVIABLE);
    }
    let mut invariants = Vec::new();
    if let Some(ok) = rep.weak_duality_ok {
        invariants.push(InvariantCheck { name: "weak_duality", pass: ok, value: Some(rep.gap) });
    }
    if let Some(ok) = rep.strong_duality_ok {
        invariants.push(InvariantCheck {
            name: "strong_duality",
            pass: ok,
            value: Some(rep.gap.abs()),
        });
    }
    match superhedge_price(&inst.tree, &inst.pset, &inst.claim) {
        Ok(phi) => invariants.push(InvariantCheck {
            name: "relaxed_below_superhedge",
            pass: rep.primal.price <= phi.price + 1e-8,
            value: Some(rep.primal.price - phi.price),
        }),
        Err(e) => return solver_error(&e.to_string()),
    }
    if let Some(q) = &rep.dual.measure {
        let tol = inst.martingale_tol.max(1e-8);
        invariants.push(InvariantCheck {
            name: "certificate_martingale",
            pass: market::is_martingale_measure(&inst.tree, q, tol),
            value: None,
        });
    }
    if let Some(lp) = &rep.dual.leaf_probabilities {
        invariants.push(InvariantCheck {
            name: "certificate_supported",
            pass: dual::supported_only(&inst.tree, &inst.pset, lp),
            value: None,
        });
    }
    invariants.push(InvariantCheck {
        name: "shortfall_acceptable",
        pass: rep.primal.acceptance_residual <= 1e-6,
        value: Some(rep.primal.acceptance_residual),
    });
    if inst.floor.is_some() {
        invariants.push(InvariantCheck {
            name: "floor_respected",
            pass: rep.primal.floor_violation <= 1e-8,
            value: Some(rep.primal.floor_violation),
        });
    }
    let all_pass = invariants.iter().all(|c| c.pass);
    let report = VerifyReport {
        format: 1,
        command: "verify",
        status: if all_pass { "ok".into() } else { "invariant_failure".into() },
        primal: rep.primal.price.is_finite().then_some(rep.primal.price),
        dual: rep.dual.value.is_finite().then_some(rep.dual.value),
        gap: rep.gap.is_finite().then_some(rep.gap),
        selected_p: rep.dual.selected_p,
        lambda: rep.dual.lambda.clone(),
        certificate_q: rep.dual.leaf_probabilities.clone(),
        invariants,
        tolerances,
        iterations: IterationCounts {
            relaxed: Some(rep.primal.iterations),
            dual: Some(rep.dual.iterations),
            ..Default::default()
        },
    };
    let code = if all_pass { EXIT_OK } else { EXIT_SOLVER };
    (serde_json::to_value(report).expect("report"), code)
}

fn cmd_risk(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    let Some(position) = &inst.position else {
        return validation_error("position", "the risk command needs explicit leaf payoffs");
    };
    if inst.spec.is_strict_cone() {
        return validation_error("loss", "the positive cone has no certainty-equivalent risk");
    }
    let mut oce_per_measure = Vec::new();
    for p in inst.pset.measures() {
        match risk::oce(&inst.tree, p, position, &inst.spec) {
            Ok(r) => oce_per_measure.push(r.value),
            Err(e) => return solver_error(&e.to_string()),
        }
    }
    let robust = match risk::robust_oce(&inst.tree, &inst.pset, position, &inst.spec) {
        Ok(r) => r,
        Err(e) => return solver_error(&e.to_string()),
    };
    let dual = match risk::dual_oce(&inst.tree, &inst.pset, position, &inst.spec) {
        Ok(d) => d,
        Err(e) => return solver_error(&e.to_string()),
    };
    let (penalty_q, penalty_q_mixture) = match &inst.q_measure {
        Some(q) => {
            let single = match risk::divergence_penalty(&inst.tree, q, &inst.pset, &inst.spec) {
                Ok(v) => v,
                Err(e) => return solver_error(&e.to_string()),
            };
            let mix =
                match risk::divergence_penalty_mixture(&inst.tree, q, &inst.pset, &inst.spec) {
                    Ok((v, _)) => v,
                    Err(e) => return solver_error(&e.to_string()),
                };
            (Some(single), Some(mix))
        }
        None => (None, None),
    };
    let report = RiskReport {
        format: 1,
        command: "risk",
        status: "ok".into(),
        oce_per_measure,
        robust_oce: robust.value,
        m_star: robust.m_star,
        worst_measure: robust.worst_measure,
        dual_oce: dual.value,
        dual_oce_gap: dual.gap,
        penalty_q,
        penalty_q_mixture,
        tolerances: Tolerances::with_martingale(inst.martingale_tol),
        iterations: IterationCounts { dual: Some(dual.iterations), ..Default::default() },
    };
    (serde_json::to_value(report).expect("report"), EXIT_OK)
}

fn cmd_oracle_brute(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    let xmax = inst.claim.values().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let n_z: usize = inst
        .tree
        .nonterminals()
        .iter()
        .filter(|&&n| inst.pset.is_supported(n))
        .count()
        * inst.tree.asset_count();
    let mut axes = vec![GridAxis { lo: -(xmax + 2.0), hi: xmax + 2.0, step: 1e-3 }];
    axes.extend(std::iter::repeat(GridAxis { lo: -2.0, hi: 2.0, step: 0.05 }).take(n_z));
    let grid = GridSpec { axes, refine_factor: 10.0, rounds: 2 };
    match oracle::brute_force_primal(&inst.tree, &inst.pset, &inst.claim, &inst.spec, &grid) {
        Ok(value) => (
            serde_json::json!({
                "format": 1, "command": "oracle brute-force", "status": "ok",
                "value": value, "final_cash_step": 1e-3 / 100.0,
            }),
            EXIT_OK,
        ),
        Err(e) => solver_error(&e.to_string()),
    }
}

fn cmd_oracle_vertices(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    match oracle::enumerate_martingale_vertices(&inst.tree, inst.pset.support()) {
        Ok(vertices) => {
            let leafs: Vec<Vec<f64>> =
                vertices.iter().map(|m: &TreeMeasure| m.leaf_probabilities(&inst.tree)).collect();
            (
                serde_json::json!({
                    "format": 1, "command": "oracle vertices", "status": "ok",
                    "count": leafs.len(), "leaf_probabilities": leafs,
                }),
                EXIT_OK,
            )
        }
        Err(e) => solver_error(&e.to_string()),
    }
}

fn cmd_oracle_cvar(inst: &Instance, _args: &CommonArgs) -> (serde_json::Value, u8) {
    let Some(position) = &inst.position else {
        return validation_error("position", "the cvar oracle needs explicit leaf payoffs");
    };
    if inst.spec.kind_name() != "cvar" {
        return validation_error("loss", "the cvar oracle needs a cvar loss");
    }
    // Recover alpha from the conjugate domain cap.
    let alpha = 1.0 / inst.spec.conjugate_pieces().expect("cvar is polyhedral").domain.1;
    let values: Vec<f64> = inst
        .pset
        .measures()
        .iter()
        .map(|p| oracle::cvar_sorted(&inst.tree, p, position, alpha))
        .collect();
    (
        serde_json::json!({
            "format": 1, "command": "oracle cvar", "status": "ok",
            "alpha": alpha, "per_measure": values,
            "worst": values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }),
        EXIT_OK,
    )
}

fn to_pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}
