//! `htrcf` command-line runner.
//!
//! Exit codes: 0 ok, 1 usage or validation error, 2 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use htrcf::crypto::arith::random_below;
use htrcf::crypto::{drsa_keygen, rsa_decrypt, rsa_encrypt, verify_handshake, DhParams, HandshakeOutcome, Peer, PeerBehavior};
use htrcf::model::{NodeId, TraceEvent, TraceKind};
use htrcf::sim::{compare, run_scheme, ConfigError, ScenarioConfig, Scheme, SimError};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "htrcf", version, about = "Clustered group key management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and report
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Include ciphertexts in transcripts.jsonl
        #[arg(long)]
        full_trace: bool,
    },
    /// Run a scenario under both schemes and print the comparison
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Derive a node's RSA key pair and check a round trip
    Keygen {
        #[arg(long)]
        node_id: u32,
        #[arg(long, default_value_t = 512)]
        bits: u32,
        /// Draw the test message from system entropy
        #[arg(long)]
        entropy: bool,
    },
    /// Run one authenticated key exchange and print its messages
    HandshakeDemo {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use the 23/5 textbook group
        #[arg(long)]
        toy: bool,
        /// How the initiator behaves
        #[arg(long, value_enum, default_value_t = Behavior::Honest)]
        initiator: Behavior,
    },
    /// Filter a trace file
    Trace {
        #[arg(long)]
        path: PathBuf,
        /// send, receive, beacon, rekey, join, leave, blacklist or elect
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        node: Option<u32>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Behavior {
    Honest,
    SubstituteKey,
    DegeneratePublic,
}

impl From<Behavior> for PeerBehavior {
    fn from(b: Behavior) -> Self {
        match b {
            Behavior::Honest => PeerBehavior::Honest,
            Behavior::SubstituteKey => PeerBehavior::SubstituteKey,
            Behavior::DegeneratePublic => PeerBehavior::DegeneratePublic,
        }
    }
}

enum Failure {
    Usage(String),
    Io(String),
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Io(format!("{}: {e}", path.display()))
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HTRCF_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            full_trace,
        } => cmd_run(&config, &out, seed, full_trace),
        Command::Compare { config, seed, json } => cmd_compare(&config, seed, json),
        Command::Keygen { node_id, bits, entropy } => cmd_keygen(node_id, bits, entropy),
        Command::HandshakeDemo { seed, toy, initiator } => cmd_handshake(seed, toy, initiator),
        Command::Trace { path, kind, node } => cmd_trace(&path, kind.as_deref(), node),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut cfg = ScenarioConfig::from_json(&text).map_err(|e| match &e {
        ConfigError::Churn { index, .. } => match churn_line(&text, *index) {
            Some(line) => Failure::Usage(format!("{}:{line}: {e}", path.display())),
            None => Failure::Usage(format!("{}: {e}", path.display())),
        },
        _ => Failure::Usage(format!("{}: {e}", path.display())),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn sim_failure(e: SimError) -> Failure {
    Failure::Usage(e.to_string())
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, full_trace: bool) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let scheme = if cfg.baseline { Scheme::Baseline } else { Scheme::HtRcf };
    info!("running {} with seed {}", scheme.label(), cfg.seed);
    let outcome = run_scheme(&cfg, scheme).map_err(sim_failure)?;

    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Failure::io(&p, e))
    };
    write("trace.jsonl", &outcome.trace_jsonl())?;
    write("report.json", &outcome.report.to_json())?;
    write("report.csv", &outcome.report.to_csv())?;
    write("transcripts.jsonl", &outcome.transcripts_jsonl(full_trace))?;

    let r = &outcome.report;
    println!("scheme      {}", r.scheme.label());
    println!("seed        {}", r.seed);
    println!("t_pow       {:.6} J", r.t_pow);
    println!("t_time      {:.3} ms", r.t_time);
    println!("groups      {} formed, {} at end", r.groups_formed, r.final_groups);
    println!("rekeys      {} ({} bytes)", r.rekey_count, r.rekey_bytes);
    println!("messages    {} ({} bytes)", r.messages_sent, r.bytes_sent);
    println!("blacklisted {}", r.blacklist_count);
    println!("trace       {} events, sha256 {}", outcome.trace.len(), outcome.trace_hash());
    Ok(())
}

fn cmd_compare(config: &Path, seed: Option<u64>, json: bool) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let a = run_scheme(&cfg, Scheme::HtRcf).map_err(sim_failure)?;
    let b = run_scheme(&cfg, Scheme::Baseline).map_err(sim_failure)?;
    let c = compare(&a.report, &b.report).map_err(sim_failure)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&c).expect("comparison serializes"));
    } else {
        print!("{c}");
    }
    Ok(())
}

fn cmd_keygen(node_id: u32, bits: u32, entropy: bool) -> CmdResult {
    let kp = drsa_keygen(NodeId(node_id), bits).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("node {node_id}, {}-bit modulus", kp.n.bits());
    println!("k = {}", kp.k);
    println!("n = {}", kp.n);
    let m = if entropy {
        random_below(&mut rand::rng(), &kp.n)
    } else {
        random_below(&mut ChaCha8Rng::seed_from_u64(node_id as u64), &kp.n)
    };
    let c = rsa_encrypt(&m, &kp.public()).map_err(|e| Failure::Usage(e.to_string()))?;
    let back = rsa_decrypt(&c, &kp.private()).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("m = {m}");
    println!("c = {c}");
    if back == m {
        println!("round trip: ok");
        Ok(())
    } else {
        println!("round trip: FAILED (got {back})");
        Err(Failure::Usage("decryption did not invert encryption".into()))
    }
}

fn cmd_handshake(seed: u64, toy: bool, initiator: Behavior) -> CmdResult {
    let params = if toy { DhParams::toy() } else { DhParams::default_256() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Peer {
        id: NodeId(1),
        behavior: initiator.into(),
    };
    let hs = verify_handshake(a, Peer::honest(NodeId(2)), &params, &mut rng);
    println!("group: x = {}, g = {}", params.modulus(), params.generator());
    for (i, m) in hs.messages.iter().enumerate() {
        println!("{}. {} -> {}: {} bytes", i + 1, m.from, m.to, m.bytes);
    }
    match &hs.outcome {
        HandshakeOutcome::Verified(ch) => println!("verified, session key {}", hex::encode(ch.key())),
        HandshakeOutcome::Rejected {
            detected_by,
            suspect,
            reason,
        } => println!("rejected by {detected_by}: {reason:?}, suspect {suspect}"),
    }
    Ok(())
}

fn cmd_trace(path: &Path, kind: Option<&str>, node: Option<u32>) -> CmdResult {
    let kind = match kind {
        Some(k) => Some(TraceKind::parse(k).ok_or_else(|| Failure::Usage(format!("unknown event kind {k:?}")))?),
        None => None,
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut shown = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(line).map_err(|e| Failure::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if kind.is_some_and(|k| ev.kind != k) || node.is_some_and(|n| ev.node != NodeId(n)) {
            continue;
        }
        println!("{line}");
        shown += 1;
    }
    eprintln!("{shown} events");
    Ok(())
}

/// Line of the `index`-th element of the top-level `churn` array.
fn churn_line(text: &str, index: usize) -> Option<usize> {
    let mut line = 1;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    let mut token = String::new();
    let mut last_key = String::new();
    let mut in_churn = false;
    let mut expect = false;
    let mut seen = 0;
    for c in text.chars() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => {
                    in_str = false;
                    if depth == 1 {
                        last_key = std::mem::take(&mut token);
                    }
                }
                _ => token.push(c),
            }
            if c == '\n' {
                line += 1;
            }
            continue;
        }
        if in_churn && depth == 2 && expect && !c.is_whitespace() && c != ']' {
            if seen == index {
                return Some(line);
            }
            seen += 1;
            expect = false;
        }
        match c {
            '\n' => line += 1,
            '"' => {
                in_str = true;
                token.clear();
            }
            '[' if depth == 1 && last_key == "churn" => {
                in_churn = true;
                expect = true;
                depth += 1;
            }
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if depth == 1 && in_churn {
                    in_churn = false;
                    last_key.clear();
                }
            }
            ',' if in_churn && depth == 2 => expect = true,
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_churn_lines() {
        let text = r#"{
  "node_count": 3,
  "note": "churn",
  "churn": [
    {"time_ms": 1, "action": "leave", "node": 0},
    {
      "time_ms": 2, "action": "join", "node": 9
    }
  ]
}"#;
        assert_eq!(churn_line(text, 0), Some(5));
        assert_eq!(churn_line(text, 1), Some(6));
        assert_eq!(churn_line(text, 2), None);
        assert_eq!(churn_line(r#"{"churn": [{"node": 1}, {"node": 2}]}"#, 1), Some(1));
    }
}
