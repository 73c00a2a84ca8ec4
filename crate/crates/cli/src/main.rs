//! `fgend`: command-line front end for fgend-core.
//!
//! Input files hold one endomorphism in the text format
//!
//! ```text
//! rank: 2
//! map: a -> ab ; b -> ba
//! ```
//!
//! (`-` reads standard input). Exit codes: 0 when the analysis ran, whatever
//! the verdict; 2 for bad input; 3 for an internal failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fgend_core::certify::{certify, certify_hnn, Config, Verdict};
use fgend_core::dynamics::{
    canonical_cyclic_words, elliptic_ffs, infinite_tail_probe, is_injective, is_surjective, max_fixed_ffs,
};
use fgend_core::graphmap::iterated_stallings;
use fgend_core::pullback::iterated_pullback;
use fgend_core::traintrack::{expansion_profile, make_train_track, stretch_factor, TrackOutcome};
use fgend_core::word::root_and_exponent;
use fgend_core::{EndoFragment, EndoSpec, Error, GraphMap};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fgend", version, about = "Dynamics of injective free group endomorphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Injectivity, surjectivity, fixed and elliptic systems, tail probes.
    Analyze {
        file: PathBuf,
        /// Longest cyclic word probed for infinite tails.
        #[arg(long, default_value_t = 3)]
        probe_len: usize,
        #[arg(long, default_value_t = 8)]
        probe_depth: usize,
        #[arg(long, default_value_t = 32)]
        budget: usize,
    },
    /// Stallings graph of φ^k(F).
    Stallings {
        file: PathBuf,
        #[arg(short)]
        k: usize,
        /// Write the graph in DOT format to this file (`-` for stdout).
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Pullback φ^k(F) ∧ φ^k(F).
    Pullback {
        file: PathBuf,
        #[arg(short)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Train track representative of the rose map.
    Traintrack {
        file: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        #[arg(long)]
        json: bool,
    },
    /// Hyperbolicity verdict for the mapping torus.
    Certify {
        file: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        max_period: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Verdict for the ascending HNN extension over a free factor.
    CertifyHnn {
        file: PathBuf,
        /// Generators spanning the factor, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        factor: Vec<char>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        json: bool,
    },
}

fn read_input(path: &PathBuf) -> Result<String, Error> {
    let res =
        if path.as_os_str() == "-" { std::io::read_to_string(std::io::stdin()) } else { std::fs::read_to_string(path) };
    res.map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn load(path: &PathBuf) -> Result<EndoSpec, Error> {
    EndoSpec::parse(&read_input(path)?)
}

fn write_out(path: &PathBuf, text: &str) -> Result<(), Error> {
    if path.as_os_str() == "-" {
        print!("{text}");
        Ok(())
    } else {
        std::fs::write(path, text).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
    }
}

fn print_verdict(v: &Verdict, as_json: bool) {
    if as_json {
        println!("{}", v.to_json());
        return;
    }
    println!("verdict: {:?}", v.verdict);
    if let Some(w) = &v.witness {
        println!("witness: c = {}, j = {}, d = {}", w.c, w.j, w.d);
    }
    for f in &v.facts {
        println!("fact: {f}");
    }
    for a in &v.assumptions {
        println!("assumes: {a}");
    }
}

fn analyze(phi: &EndoSpec, probe_len: usize, probe_depth: usize, budget: usize) -> Result<(), Error> {
    let (inj, trace) = is_injective(phi)?;
    print!("{}", phi.to_text());
    println!("injective: {inj}");
    if !inj {
        println!("rank drop: {} after {} folds", trace.rank_drop, trace.fold_count);
        return Ok(());
    }
    println!("surjective: {}", is_surjective(phi)?);
    println!("fixed system: {}", max_fixed_ffs(phi, budget)?.describe());
    match elliptic_ffs(phi, budget) {
        Ok(e) => println!("elliptic system: {}", e.describe()),
        Err(Error::Precondition(m)) => println!("elliptic system: n/a ({m})"),
        Err(e) => return Err(e),
    }
    for len in 1..=probe_len {
        for c in canonical_cyclic_words(phi.rank(), len) {
            if matches!(root_and_exponent(&c), Ok((_, e)) if e > 1) {
                continue;
            }
            let p = infinite_tail_probe(phi, &c, probe_depth)?;
            if p.depth_survived >= probe_depth {
                let chain: Vec<String> = p.preimage_chain.iter().map(|w| w.to_text(&phi.basis)).collect();
                println!(
                    "tail: [{}] survives {} steps: {}",
                    c.to_text(&phi.basis),
                    p.depth_survived,
                    chain.join(" <- ")
                );
            }
        }
    }
    Ok(())
}

fn stallings(phi: &EndoSpec, k: usize, dot: Option<&PathBuf>) -> Result<(), Error> {
    let s = iterated_stallings(phi, k)?;
    let g = s.free_core();
    println!("k: {k}");
    println!("rank: {}", s.rank());
    println!("vertices: {}, edges: {}", s.graph.num_vertices, s.graph.edges.len());
    if let Ok(ns) = g.natural_structure() {
        let lens: Vec<usize> = ns.natural_edges.iter().map(|n| n.len()).collect();
        println!("branch points: {}, natural edge lengths: {lens:?}", ns.branch_points.len());
    }
    if let Some(out) = dot {
        write_out(out, &s.graph.to_dot(&phi.basis))?;
    }
    Ok(())
}

fn pullback(phi: &EndoSpec, k: usize, as_json: bool) -> Result<(), Error> {
    let p = iterated_pullback(phi, k)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&p.to_json(&phi.basis)).expect("json"));
        return Ok(());
    }
    println!("k: {k}, components: {}, rr: {}, hat: {}", p.components.len(), p.rr, p.hat.len());
    for (i, c) in p.components.iter().enumerate() {
        let cyc =
            c.cyclic_generator.as_ref().map(|g| format!(" cyclic [{}]", g.to_text(&phi.basis))).unwrap_or_default();
        let hat = if p.hat.contains(&i) { " hat" } else { "" };
        println!("  {i}: rank {} coset {}{cyc}{hat}", c.rank, c.coset_rep.to_text(&phi.basis));
    }
    Ok(())
}

fn traintrack(phi: &EndoSpec, budget: usize, as_json: bool) -> Result<(), Error> {
    let f = GraphMap::from_endo(phi)?;
    let lambda_in = stretch_factor(&f)?;
    let out = make_train_track(&f, budget)?;
    let kind = match &out {
        TrackOutcome::Track { .. } => "track",
        TrackOutcome::BudgetExceeded { .. } => "budget_exceeded",
        TrackOutcome::Revisited { .. } => "revisited",
    };
    let g = out.map();
    let lambda = stretch_factor(g)?;
    let profile = expansion_profile(g);
    // images as edge paths; `-` marks a backwards crossing
    let images: Vec<String> = g
        .edge_images
        .iter()
        .map(|p| p.iter().map(|d| format!("{}e{}", if d.fwd { "" } else { "-" }, d.edge)).collect::<Vec<_>>().join(" "))
        .collect();
    if as_json {
        let v = json!({
            "outcome": kind,
            "is_track": out.is_track(),
            "lambda_in": lambda_in,
            "lambda": lambda,
            "edges": g.domain.edges.len(),
            "vertices": g.domain.num_vertices,
            "edge_images": images,
            "expansion_profile": profile,
            "trace": out.trace(),
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("json"));
        return Ok(());
    }
    println!("outcome: {kind}");
    println!("lambda: {lambda} (rose map {lambda_in})");
    println!("vertices: {}, edges: {}", g.domain.num_vertices, g.domain.edges.len());
    for (e, img) in images.iter().enumerate() {
        let grows = if profile[e] { "expanding" } else { "nonexpanding" };
        let label = phi.basis.name(g.domain.edges[e].label);
        println!("  e{e} [{label}] -> {img} ({grows})");
    }
    println!("trace: {}", serde_json::to_string(out.trace()).expect("json"));
    Ok(())
}

fn factor_indices(frag: &EndoFragment, factor: &[char]) -> Result<Vec<usize>, Error> {
    factor.iter().map(|&c| frag.basis.letter(c).map(|l| (l.unsigned_abs() - 1) as usize)).collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Analyze { file, probe_len, probe_depth, budget } => {
            analyze(&load(&file)?, probe_len, probe_depth, budget)
        }
        Command::Stallings { file, k, dot } => stallings(&load(&file)?, k, dot.as_ref()),
        Command::Pullback { file, k, json } => pullback(&load(&file)?, k, json),
        Command::Traintrack { file, budget, json } => traintrack(&load(&file)?, budget, json),
        Command::Certify { file, horizon, max_period, max_len, json } => {
            let d = Config::default();
            let cfg = Config {
                pullback_horizon: horizon,
                periodic_max_period: max_period.unwrap_or(d.periodic_max_period),
                periodic_max_len: max_len.unwrap_or(d.periodic_max_len),
                ..d
            };
            print_verdict(&certify(&load(&file)?, &cfg)?, json);
            Ok(())
        }
        Command::CertifyHnn { file, factor, horizon, json } => {
            let frag = EndoFragment::parse(&read_input(&file)?)?;
            let idx = factor_indices(&frag, &factor)?;
            let cfg = Config { pullback_horizon: horizon, ..Config::default() };
            print_verdict(&certify_hnn(&idx, &frag, &cfg)?, json);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fgend: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
