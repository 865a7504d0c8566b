use std::process::ExitCode;

use clap::Parser;
use oamqkd::montecarlo::Intensity;
use oamqkd_cli::{run, Cli, ResultBundle};

fn print_summary(b: &ResultBundle) {
    let p = &b.provenance;
    println!("{} (oamqkd {}, config sha256 {})", p.command, p.tool_version, &p.config_sha256[..16]);
    if let (Some(seed), Some(n)) = (p.seed, p.n_pulses) {
        println!("seed {seed}, {n} pulses");
    }
    let signal: Vec<_> = b.qber.iter().filter(|r| r.intensity == Intensity::Mu).collect();
    if !signal.is_empty() {
        println!("\n{:<6} {:<5} {:>10} {:>10} {:>9}", "key", "basis", "clicks", "QBER %", "± %");
        for r in signal {
            println!(
                "{:<6} {:<5} {:>10} {:>10.3} {:>9.3}",
                r.protocol.label(),
                r.basis.to_string(),
                r.clicks,
                100.0 * r.qber,
                100.0 * r.stderr
            );
        }
    }
    for m in &b.matrices {
        println!(
            "\n{}: fidelity {:.2} ± {:.2} % over {} rows",
            m.label,
            100.0 * m.fidelity,
            100.0 * m.fidelity_stderr,
            m.rows.len()
        );
    }
    if !b.key_rates.is_empty() {
        println!(
            "\n{:<8} {:>3} {:>8} {:>8} {:>11} {:>12}",
            "key", "D", "E_Z %", "e1_X %", "Q1_Z", "R kbit/s"
        );
        for r in &b.key_rates {
            println!(
                "{:<8} {:>3} {:>8.2} {:>8.2} {:>11.4e} {:>12.3}",
                r.label,
                r.dimension,
                100.0 * r.e_z,
                100.0 * r.e1_x,
                r.q1_z,
                r.kbits_per_s()
            );
        }
        if let Some(total) = b.combined_key_rate_bits_per_s {
            println!("combined multiplexed rate: {:.3} kbit/s", total / 1e3);
        }
    }
    if !b.thresholds.is_empty() {
        println!("\n{:>3} {:>14} {:>14}", "D", "collective %", "individual %");
        for t in &b.thresholds {
            let ind = t
                .individual
                .map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v));
            println!("{:>3} {:>14.2} {:>14}", t.dimension, 100.0 * t.collective, ind);
        }
    }
    if !b.arrival_times.is_empty() {
        println!("\n{:>5} {:>10} {:>16}", "|l|", "fiber ns", "compensated ns");
        for r in &b.arrival_times {
            println!("{:>5} {:>10.3} {:>16.3}", r.order, r.fiber_ns, r.compensated_ns);
        }
    }
    for w in &b.warnings {
        eprintln!("warning: {w}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((bundle, files)) => {
            print_summary(&bundle);
            if !files.is_empty() {
                println!();
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
