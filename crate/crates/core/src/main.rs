use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sonni::adversary::{self, AttackStrategy};
use sonni::analysis::{self, CsvRow, Formula};
use sonni::harness::config::ConfigFile;
use sonni::harness::transport;
use sonni::protocol::run::{run_protocol, RunOptions, TransportKind};
use sonni::protocol::{Outcome, Party};
use sonni::scenario::{ConfigError, Mode, Scenario};

const EXIT_ABORTED: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sonni",
    version,
    about = "Three-party oblivious inference simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session and report the outcome.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "in-process")]
        transport: TransportKind,
        /// Transcript file (line-delimited JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include payloads and plaintext views in the transcript.
        #[arg(long)]
        debug: bool,
    },
    /// Estimate the success rate of a theft strategy by simulation.
    AttackSim {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "one-shot")]
        strategy: Formula,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run complete encrypted sessions instead of slot guessing.
        #[arg(long)]
        protocol: bool,
        /// CSV file; rows are appended.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce published numbers.
    Analyze {
        what: Analysis,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one party as a standalone process over TCP.
    Serve {
        #[arg(long)]
        party: Party,
        #[arg(long)]
        listen: Option<SocketAddr>,
        #[arg(long = "peer", value_parser = parse_peer)]
        peers: Vec<(Party, SocketAddr)>,
        #[arg(long)]
        timeout_ms: Option<u64>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Table1,
    Fig3,
    PaperClaims,
}

fn parse_peer(s: &str) -> Result<(Party, SocketAddr), String> {
    let (p, a) = s.split_once('=').ok_or("expected party=host:port")?;
    Ok((p.parse()?, a.parse().map_err(|e| format!("{e}"))?))
}

#[derive(Args, Default)]
struct ScenarioArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    quant_step: Option<f64>,
    /// Encryption and per-operation noise magnitude.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    round: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(Scenario, Option<ConfigFile>), ConfigError> {
        let file = self.config.as_ref().map(ConfigFile::load).transpose()?;
        let mut s = match &file {
            Some(f) => f.to_scenario()?,
            None => Scenario::default(),
        };
        if let Some(mode) = &self.mode {
            s.mode = match mode.as_str() {
                "legacy" => Mode::Legacy,
                "sonni" => Mode::Sonni,
                other => return Err(ConfigError::Parse(format!("unknown mode {other:?}"))),
            };
            if s.mode == Mode::Legacy && self.m.is_none() {
                s.m = 0;
            }
        }
        s.slots = self.slots.unwrap_or(s.slots);
        s.d = self.d.unwrap_or(s.d);
        s.m = self.m.unwrap_or(s.m);
        s.degree = self.degree.unwrap_or(s.degree);
        s.quant_step = self.quant_step.unwrap_or(s.quant_step);
        s.master_seed = self.seed.unwrap_or(s.master_seed);
        s.round = self.round.unwrap_or(s.round);
        if let Some(n) = self.noise {
            s.encrypt_noise = n;
            s.op_noise = n;
        }
        if let Some(name) = &self.strategy {
            s.strategy = AttackStrategy::parse(name, self.k.unwrap_or(1))?;
        } else if let Some(k) = self.k {
            match &mut s.strategy {
                AttackStrategy::OneShotTheft { k: kk } => *kk = k,
                AttackStrategy::PerRoundTheft { rounds } => *rounds = k,
                _ => {}
            }
        }
        s.validate()?;
        Ok((s, file))
    }
}

fn exit_for(outcome: &Outcome) -> ExitCode {
    match outcome {
        Outcome::Delivered { .. } => ExitCode::SUCCESS,
        Outcome::Aborted { .. } => ExitCode::from(EXIT_ABORTED),
        Outcome::TransportFailure { .. } => ExitCode::from(EXIT_TRANSPORT),
    }
}

fn describe(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Delivered { value } => format!("delivered {} values", value.len()),
        Outcome::Aborted { by, reason } => format!("aborted by {by}: {reason}"),
        Outcome::TransportFailure { reason } => format!("transport failure: {reason}"),
    }
}

fn fmt_values(v: &[f64]) -> String {
    let shown: Vec<String> = v.iter().take(8).map(|x| format!("{x:.6}")).collect();
    let more = if v.len() > 8 {
        format!(", ... ({} total)", v.len())
    } else {
        String::new()
    };
    format!("[{}{more}]", shown.join(", "))
}

fn cmd_run(
    args: &ScenarioArgs,
    transport: TransportKind,
    out: Option<PathBuf>,
    debug: bool,
) -> anyhow::Result<ExitCode> {
    let (s, _) = match args.load() {
        Ok(v) => v,
        Err(e) => return config_error(e),
    };
    let opts = RunOptions {
        transport,
        debug,
        ..Default::default()
    };
    let report = run_protocol(&s, &opts)?;
    println!("outcome: {}", describe(&report.outcome));
    if let Outcome::Delivered { value } = &report.outcome {
        let oracle = s.provider_model().eval_plain(&s.client_input())?;
        let err = value
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("f(x) = {}", fmt_values(value));
        println!("max error vs plaintext oracle: {err:.3e}");
    }
    if s.strategy != AttackStrategy::HonestServer {
        let a = adversary::assess(&s, &report);
        println!(
            "attack {}: leaked={}, detected={}",
            a.strategy, a.parameters_leaked, a.detected
        );
    }
    if let Some(path) = out {
        report
            .transcript
            .write_jsonl(BufWriter::new(File::create(&path)?), debug)?;
        println!("transcript: {}", path.display());
    }
    Ok(exit_for(&report.outcome))
}

fn config_error(e: ConfigError) -> anyhow::Result<ExitCode> {
    eprintln!("invalid configuration: {e}");
    Ok(ExitCode::from(EXIT_CONFIG))
}

fn csv_sink(out: &Option<PathBuf>) -> io::Result<(Box<dyn Write>, bool)> {
    Ok(match out {
        Some(path) => {
            let fresh = std::fs::metadata(path)
                .map(|m| m.len() == 0)
                .unwrap_or(true);
            let f = OpenOptions::new().create(true).append(true).open(path)?;
            (Box::new(BufWriter::new(f)), fresh)
        }
        None => (Box::new(io::stdout()), true),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack_sim(
    d: usize,
    m: usize,
    k: usize,
    formula: Formula,
    trials: u64,
    seed: u64,
    protocol: bool,
    out: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let exact = match analysis::probability(formula, d, m, k) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("invalid configuration: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let (est, source) = if protocol {
        let slots = (d + m).next_power_of_two();
        let base = Scenario {
            slots,
            d,
            m,
            ..Default::default()
        };
        match analysis::monte_carlo_protocol(&base, formula, k, trials, seed) {
            Ok(e) => (e, "monte-carlo-protocol"),
            Err(e) => {
                eprintln!("invalid configuration: {e}");
                return Ok(ExitCode::from(EXIT_CONFIG));
            }
        }
    } else {
        (
            analysis::monte_carlo(formula, d, m, k, trials, seed)?,
            "monte-carlo",
        )
    };
    eprintln!(
        "{formula} d={d} m={m} k={k}: p_hat={:.6} +/- {:.2e} over {} trials, exact {:.6e} ({:.2} sigma)",
        est.p_hat,
        est.stderr,
        est.trials,
        exact.p,
        est.z_score(exact.p)
    );
    let rows = [
        CsvRow::exact(&exact),
        CsvRow::estimate(formula, d, m, k, &est, source),
    ];
    let (sink, header) = csv_sink(&out)?;
    analysis::write_csv(sink, &rows, header)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(what: Analysis, out: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    match what {
        Analysis::Table1 => {
            let rows = analysis::reproduce_table1();
            eprint!("{}", analysis::discrepancy_report(&rows));
            let (sink, header) = csv_sink(&out)?;
            analysis::write_csv(sink, &analysis::table1_csv_rows(&rows), header)?;
            let ok = rows.iter().all(|r| r.same_order_of_magnitude());
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Analysis::Fig3 => {
            let rows = analysis::figure3_curves(1024, &[10, 128, 256, 512], 1..=512);
            let (sink, header) = csv_sink(&out)?;
            analysis::write_csv(sink, &rows, header)?;
            Ok(ExitCode::SUCCESS)
        }
        Analysis::PaperClaims => {
            let claims = analysis::paper_claims();
            let mut w: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(io::stdout()),
            };
            for c in &claims {
                writeln!(
                    w,
                    "{:<36} computed {:.4e}  printed {:.4e}  rel.err {:.3e}  {}",
                    c.name,
                    c.computed,
                    c.printed,
                    c.relative_error,
                    if c.pass { "PASS" } else { "FAIL" }
                )?;
            }
            w.flush()?;
            Ok(if claims.iter().all(|c| c.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn cmd_serve(
    party: Party,
    listen: Option<SocketAddr>,
    peers: Vec<(Party, SocketAddr)>,
    timeout_ms: Option<u64>,
    args: &ScenarioArgs,
    out: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let (s, file) = match args.load() {
        Ok(v) => v,
        Err(e) => return config_error(e),
    };
    let mut all = file.as_ref().map(ConfigFile::peers).unwrap_or_default();
    all.extend(peers);
    let listen = listen.or_else(|| all.get(&party).copied());
    let timeout = timeout_ms
        .map(Duration::from_millis)
        .or_else(|| file.as_ref().and_then(ConfigFile::timeout))
        .unwrap_or(Duration::from_secs(30));
    let opts = RunOptions {
        transport: TransportKind::Tcp,
        timeout,
        ..Default::default()
    };
    let report = match transport::serve(party, listen, &all, &s, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{party}: {e}");
            return Ok(ExitCode::from(EXIT_TRANSPORT));
        }
    };
    println!("{party}: {}", describe(&report.outcome));
    if let (Party::Client, Outcome::Delivered { value }) = (party, &report.outcome) {
        println!("f(x) = {}", fmt_values(value));
    }
    if let Some(path) = out {
        report
            .transcript
            .write_jsonl(BufWriter::new(File::create(&path)?), false)?;
    }
    Ok(exit_for(&report.outcome))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            transport,
            out,
            debug,
        } => cmd_run(&scenario, transport, out, debug),
        Command::AttackSim {
            d,
            m,
            k,
            strategy,
            trials,
            seed,
            protocol,
            out,
        } => cmd_attack_sim(d, m, k, strategy, trials, seed, protocol, out),
        Command::Analyze { what, out } => cmd_analyze(what, out),
        Command::Serve {
            party,
            listen,
            peers,
            timeout_ms,
            scenario,
            out,
        } => cmd_serve(party, listen, peers, timeout_ms, &scenario, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
