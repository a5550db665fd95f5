mod error;
mod evolve;
mod suites;
mod system;

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use stargen::covariant::christoffel;
use stargen::moyal::{moyal_bracket, star};
use stargen::{PhaseSpace, Symbol};

use error::CliError;
use suites::Suite;
use system::System;

#[derive(Parser)]
#[command(name = "stargen", version, about = "Star products, histories and quasidistribution grids for parametrized systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SystemArgs {
    /// Built-in system (`coupled`).
    #[arg(long)]
    fixture: Option<String>,
    /// System definition file, or inline `h0=...;params=...`.
    #[arg(long)]
    system: Option<String>,
}

#[derive(Args, Clone, Default)]
struct Output {
    /// Emit JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run identity suites; exits 1 if any identity fails.
    Verify {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// Also write `report.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Moyal product `a ⋆ b`.
    Star(Binary),
    /// Moyal bracket `(a ⋆ b - b ⋆ a)/(i hbar)`.
    Mbracket(Binary),
    /// Nonzero Christoffel symbols of the causal map, `G^i_jk` with `j <= k`.
    Christoffel {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        output: Output,
    },
    /// History constants of motion `A_j(t,q,p)`, `B_j(t,q,p)`.
    Histories {
        #[command(flatten)]
        sys: SystemArgs,
        /// Use the Poisson flow instead of the Moyal flow.
        #[arg(long)]
        classical: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Forward and inverse causal map between (t, phi, A, B) and (t, Pt, q, p).
    CausalMap {
        #[command(flatten)]
        sys: SystemArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Propagate a quasidistribution on a grid from a JSON config.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "stargen-out")]
        out: PathBuf,
        /// Overrides the config's hbar.
        #[arg(long)]
        hbar: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Binary {
    a: String,
    b: String,
    #[command(flatten)]
    sys: SystemArgs,
    /// Substitute a value for hbar (`1/2`, `0.5`).
    #[arg(long)]
    hbar: Option<String>,
    #[command(flatten)]
    output: Output,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = match &cli.command {
        Command::Verify { output, .. }
        | Command::Christoffel { output, .. }
        | Command::Histories { output, .. }
        | Command::CausalMap { output, .. }
        | Command::Evolve { output, .. } => output.json,
        Command::Star(b) | Command::Mbracket(b) => b.output.json,
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            if json {
                say(&format!("{}\n", render(&e.to_json())));
            } else {
                eprintln!("error ({}): {e}", e.kind());
            }
            e.exit_code()
        }
    }
}

/// Pretty JSON; keys come out sorted because `serde_json::Map` is ordered.
fn render(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json")
}

/// Writes to stdout; a closed pipe (`stargen ... | head`) is not an error.
fn say(s: &str) {
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

fn emit(json: bool, value: Value, text: impl FnOnce() -> String) {
    if json {
        say(&format!("{}\n", render(&value)));
    } else {
        say(&text());
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Verify { sys, suite, out, output } => {
            let system = System::resolve(sys.fixture.as_deref(), sys.system.as_deref())?;
            let report = suites::run(&system, suite)?;
            let value = serde_json::to_value(&report).expect("json");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
                let path = dir.join("report.json");
                std::fs::write(&path, format!("{}\n", render(&value))).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            }
            emit(output.json, value, || report.to_text());
            Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Star(b) => binary(b, "star"),
        Command::Mbracket(b) => binary(b, "mbracket"),
        Command::Christoffel { sys, output } => {
            let system = System::resolve(sys.fixture.as_deref(), sys.system.as_deref())?;
            let ext = system.extended()?;
            let g = christoffel(&ext.causal_map()?)?;
            let c = ext.extended().coords();
            let entries: Vec<(String, String)> = g
                .nonzero()
                .into_iter()
                .filter(|(_, j, k, _)| j <= k)
                .map(|(i, j, k, s)| (format!("G^{}_{},{}", c[i], c[j], c[k]), s.to_string()))
                .collect();
            let value = json!({ "system": system.label, "coordinates": c, "entries": entries.iter().map(|(k, v)| json!({"entry": k, "value": v})).collect::<Vec<_>>() });
            emit(output.json, value, || entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect());
            Ok(ExitCode::SUCCESS)
        }
        Command::Histories { sys, classical, output } => {
            let system = System::resolve(sys.fixture.as_deref(), sys.system.as_deref())?;
            let ext = system.extended()?;
            let h = if classical { ext.classical_histories(system.max_order)? } else { ext.quantum_histories(system.max_order)? };
            let mut rows = Vec::new();
            for (j, (a, b)) in h.a.iter().zip(&h.b).enumerate() {
                rows.push((format!("A{}", j + 1), a.to_string()));
                rows.push((format!("B{}", j + 1), b.to_string()));
            }
            let map: serde_json::Map<String, Value> = rows.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
            let value = json!({ "system": system.label, "flow": if classical { "poisson" } else { "moyal" }, "histories": map });
            emit(output.json, value, || rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect());
            Ok(ExitCode::SUCCESS)
        }
        Command::CausalMap { sys, output } => {
            let system = System::resolve(sys.fixture.as_deref(), sys.system.as_deref())?;
            let d = system.extended()?.causal_map()?;
            let lines = |space: &Arc<PhaseSpace>, images: &[Symbol]| -> Vec<(String, String)> {
                space.coords().iter().cloned().zip(images.iter().map(Symbol::to_string)).collect()
            };
            let fwd = lines(d.target(), d.forward());
            let inv = lines(d.source(), d.inverse());
            let obj = |v: &[(String, String)]| -> Value { v.iter().map(|(k, s)| (k.clone(), Value::String(s.clone()))).collect::<serde_json::Map<_, _>>().into() };
            let value = json!({ "system": system.label, "forward": obj(&fwd), "inverse": obj(&inv) });
            emit(output.json, value, || {
                let mut s = String::from("# (t, Pt, q, p) in terms of (t, phi, A, B)\n");
                s.extend(fwd.iter().map(|(k, v)| format!("{k} = {v}\n")));
                s.push_str("# (t, phi, A, B) in terms of (t, Pt, q, p)\n");
                s.extend(inv.iter().map(|(k, v)| format!("{k} = {v}\n")));
                s
            });
            Ok(ExitCode::SUCCESS)
        }
        Command::Evolve { config, out, hbar, output } => {
            let cfg = evolve::Config::load(&config)?;
            let outcome = evolve::run(&cfg, hbar, &out)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let summary = outcome.manifest["summary"].clone();
            emit(output.json, outcome.manifest, || format!("{}\nartifacts in {}\n", render(&summary), out.display()));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn binary(b: Binary, op: &str) -> Result<ExitCode, CliError> {
    let (x, y) = parse_pair(&b.a, &b.b, &b.sys)?;
    let mut r = if op == "star" { star(&x, &y)? } else { moyal_bracket(&x, &y)? };
    if let Some(h) = &b.hbar {
        let value = system::parse_rational(h)?;
        let space = r.space().clone();
        r = r.substitute_var(space.hbar_var(), &Symbol::rational(&space, value))?;
    }
    let value = json!({ "operation": op, "a": b.a, "b": b.b, "coordinates": r.space().coords(), "result": r.to_string() });
    emit(b.output.json, value, || format!("{r}\n"));
    Ok(ExitCode::SUCCESS)
}

/// Parses two expressions. With a system, they live on the extended space
/// and may use the history names `A_j`, `B_j` and `phi`, which expand to
/// their Moyal-flow forms.
fn parse_pair(a: &str, b: &str, sys: &SystemArgs) -> Result<(Symbol, Symbol), CliError> {
    if sys.fixture.is_none() && sys.system.is_none() {
        let space = system::infer_space(&[a, b], None)?;
        return Ok((Symbol::parse(&space, a)?, Symbol::parse(&space, b)?));
    }
    let system = System::resolve(sys.fixture.as_deref(), sys.system.as_deref())?;
    let ext = system.extended()?;
    let es = ext.extended();
    let history_names: Vec<String> = (1..=ext.dof()).flat_map(|j| [format!("A{j}"), format!("B{j}")]).chain(["phi".to_string()]).collect();
    let uses_history = |s: &str| system::identifiers(s).iter().any(|id| history_names.contains(id));
    let mut expansions = HashMap::new();
    if uses_history(a) || uses_history(b) {
        let h = ext.quantum_histories(system.max_order)?;
        for j in 0..ext.dof() {
            expansions.insert(format!("A{}", j + 1), h.a[j].to_string());
            expansions.insert(format!("B{}", j + 1), h.b[j].to_string());
        }
        expansions.insert("phi".to_string(), ext.constraint().to_string());
    }
    let expand = |s: &str| Symbol::parse(es, &substitute_names(s, &expansions));
    Ok((expand(a)?, expand(b)?))
}

/// Replaces whole identifiers by parenthesized text.
fn substitute_names(src: &str, map: &HashMap<String, String>) -> String {
    let mut out = String::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        match map.get(word.as_str()) {
            Some(v) => out.push_str(&format!("({v})")),
            None => out.push_str(word),
        }
        word.clear();
    };
    for c in src.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            // A digit cannot start a name.
            if word.is_empty() && c.is_ascii_digit() {
                out.push(c);
            } else {
                word.push(c);
            }
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}
