//! `bcb12` — set-partition key agreement from the command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 protocol failure, 4 transport
//! failure, 5 attack budget exhausted without a crib hit.

use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bcb12::channel::{accept_tcp, connect_tcp};
use bcb12::eve::{self, AttackBudget, InterceptedSession};
use bcb12::keyder::KeyMaterial;
use bcb12::partition::{enumerate_partitions, stirling2, SetPartition};
use bcb12::protocol::{
    drive_alice, drive_bob, Direction, MPolicy, ProtocolError, SequenceSource, SessionConfig,
    TranscriptRecorder,
};
use bcb12::randstat::{byte_entropy, monobit, runs_test, RunsOutcome, DEFAULT_ALPHA};
use bcb12::vernam::{xor_cipher, BitString};

#[derive(Parser)]
#[command(name = "bcb12", version, about = "Set-partition key agreement toolkit")]
struct Cli {
    /// Verbosity; defaults to the BCB12_LOG environment variable, then info.
    #[arg(long, global = true, value_enum)]
    log_level: Option<LogLevel>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, ValueEnum)]
enum LogLevel {
    Quiet,
    Info,
    Debug,
}

static LOG_LEVEL: OnceLock<LogLevel> = OnceLock::new();

fn log_enabled(level: LogLevel) -> bool {
    *LOG_LEVEL.get().unwrap_or(&LogLevel::Info) >= level
}

macro_rules! info {
    ($($arg:tt)*) => { if log_enabled(LogLevel::Info) { eprintln!($($arg)*); } };
}

macro_rules! debug {
    ($($arg:tt)*) => { if log_enabled(LogLevel::Debug) { eprintln!($($arg)*); } };
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random partition of 1..=n into k blocks.
    GenPartition {
        #[arg(long)]
        n: u16,
        #[arg(long)]
        k: u16,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the initiator side of a session over TCP.
    Alice {
        #[command(flatten)]
        session: SessionArgs,
        /// Message file, or '-' for stdin. Bytes pass through untouched.
        #[arg(long)]
        message: String,
        /// Peer address host:port.
        #[arg(long)]
        connect: String,
        /// Amplification parameter: the draw count per message bit.
        #[arg(long, default_value_t = 2)]
        s: u32,
        /// Retry policy when the derived key is too short.
        #[arg(long, value_enum, default_value_t = RetryPolicy::Double)]
        retry: RetryPolicy,
        #[arg(long, default_value_t = 8)]
        max_retries: u32,
        /// Inject the draw sequence from a file instead of drawing randomly.
        #[arg(long)]
        alice_seq: Option<PathBuf>,
    },
    /// Run the responder side: listen, recover messages, write them out.
    Bob {
        #[command(flatten)]
        session: SessionArgs,
        /// Listen address host:port (port 0 picks one; it is printed).
        #[arg(long)]
        listen: String,
        /// Recovered-message file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Inject the draw sequence from a file instead of drawing randomly.
        #[arg(long)]
        bob_seq: Option<PathBuf>,
        /// Serve a single session and exit instead of looping.
        #[arg(long)]
        once: bool,
    },
    /// XOR a bit-string file with a key file at least as long.
    Encrypt(XorArgs),
    /// Identical to encrypt; the cipher is its own inverse.
    Decrypt(XorArgs),
    /// Statistical report (frequency test, runs test, byte entropy) on a key.
    Stats {
        /// Bit-string file holding the key.
        #[arg(long)]
        key: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Exhaustive key search against a recorded transcript.
    Attack {
        /// Transcript file: concatenated wire frames.
        #[arg(long)]
        transcript: PathBuf,
        /// Block count assumed known to the attacker.
        #[arg(long)]
        k: u16,
        /// Sweep block counts k..=k_max instead of k alone.
        #[arg(long)]
        k_max: Option<u16>,
        /// Largest ground-set size to search.
        #[arg(long)]
        n_max: Option<u16>,
        #[arg(long, default_value_t = 1_000_000)]
        max_candidates: u64,
        #[arg(long, default_value_t = 60)]
        time_limit_secs: u64,
        /// Known-plaintext file (raw bytes) marking the right key.
        #[arg(long)]
        crib: Option<PathBuf>,
    },
    /// Print the k-block partitions of 1..=n, or just their count.
    Enumerate {
        #[arg(long)]
        n: u16,
        #[arg(long)]
        k: u16,
        /// Print only S(n,k) from the recurrence, skipping the listing.
        #[arg(long)]
        count_only: bool,
    },
}

#[derive(Args)]
struct SessionArgs {
    /// Partition file shared by the two parties.
    #[arg(long)]
    partition: PathBuf,
    /// Seed for the party's draws; random when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the derived key (function, values, bits) to a file.
    #[arg(long)]
    dump_key: Option<PathBuf>,
    /// Record the wire frames seen by this side to a file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Channel read timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetryPolicy {
    Keep,
    Double,
}

#[derive(Args)]
struct XorArgs {
    /// Key bit-string file; must be at least as long as the input.
    #[arg(long)]
    key: PathBuf,
    /// Input bit-string file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Protocol(String),
    Transport(String),
    NoHit,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Protocol(_) => 3,
            CliError::Transport(_) => 4,
            CliError::NoHit => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Protocol(m) | CliError::Transport(m) => m.clone(),
            CliError::NoHit => "attack budget exhausted without a crib hit".to_string(),
        }
    }
}

fn usage(err: impl std::fmt::Display) -> CliError {
    CliError::Usage(err.to_string())
}

fn protocol_error(err: ProtocolError) -> CliError {
    match err {
        ProtocolError::Channel(e) => CliError::Transport(e.to_string()),
        other => CliError::Protocol(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = cli
        .log_level
        .unwrap_or_else(|| match std::env::var("BCB12_LOG").as_deref() {
            Ok("quiet") => LogLevel::Quiet,
            Ok("debug") => LogLevel::Debug,
            _ => LogLevel::Info,
        });
    let _ = LOG_LEVEL.set(level);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn read_file(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn read_bits(path: &Path, what: &str) -> Result<BitString, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))?;
    BitString::from_bit_str(&text).map_err(|e| usage(format!("{what} {}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, bytes: &[u8], what: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| usage(format!("cannot write {what} {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| usage(format!("cannot write {what} to stdout: {e}")))
        }
    }
}

fn load_partition(path: &Path) -> Result<SetPartition, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read partition {}: {e}", path.display())))?;
    SetPartition::from_text(&text).map_err(|e| usage(format!("partition {}: {e}", path.display())))
}

fn load_draws(path: &Path) -> Result<Vec<u16>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read draw file {}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<u16>()
                .map_err(|_| usage(format!("bad draw {tok:?} in {}", path.display())))
        })
        .collect()
}

fn sequence_source(seq_file: Option<&Path>, seed: Option<u64>) -> Result<SequenceSource, CliError> {
    match seq_file {
        Some(path) => Ok(SequenceSource::Fixed(load_draws(path)?)),
        None => Ok(SequenceSource::Seeded(seed.unwrap_or_else(rand::random))),
    }
}

fn dump_key(path: Option<&Path>, key: &KeyMaterial) -> Result<(), CliError> {
    if let Some(path) = path {
        fs::write(path, key.to_dump())
            .map_err(|e| usage(format!("cannot write key dump {}: {e}", path.display())))?;
        debug!("key dump written to {}", path.display());
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenPartition { n, k, seed, out } => {
            let seed = seed.unwrap_or_else(rand::random);
            let partition = SetPartition::random(n, k, seed).map_err(usage)?;
            write_output(out.as_deref(), partition.to_text().as_bytes(), "partition")?;
            info!("generated n={n} k={k} partition (seed {seed})");
            Ok(())
        }
        Command::Alice {
            session,
            message,
            connect,
            s,
            retry,
            max_retries,
            alice_seq,
        } => run_alice(
            session,
            &message,
            &connect,
            s,
            retry,
            max_retries,
            alice_seq,
        ),
        Command::Bob {
            session,
            listen,
            out,
            bob_seq,
            once,
        } => run_bob(session, &listen, out, bob_seq, once),
        Command::Encrypt(args) | Command::Decrypt(args) => {
            let key = read_bits(&args.key, "key")?;
            let input = read_bits(&args.input, "input")?;
            let output = xor_cipher(&input, &key).map_err(usage)?;
            write_output(
                args.out.as_deref(),
                format!("{output}\n").as_bytes(),
                "bit string",
            )
        }
        Command::Stats { key, alpha } => run_stats(&key, alpha),
        Command::Attack {
            transcript,
            k,
            k_max,
            n_max,
            max_candidates,
            time_limit_secs,
            crib,
        } => run_attack(
            &transcript,
            k,
            k_max,
            n_max,
            max_candidates,
            time_limit_secs,
            crib,
        ),
        Command::Enumerate { n, k, count_only } => {
            if count_only {
                println!("{}", stirling2(n as u32, k as u32));
                return Ok(());
            }
            let iter = enumerate_partitions(n, k).map_err(usage)?;
            let mut count = 0u64;
            for p in iter {
                let blocks: Vec<String> = (1..=p.k())
                    .map(|j| {
                        let elems: Vec<String> = p.block(j).iter().map(|e| e.to_string()).collect();
                        format!("{{{}}}", elems.join(" "))
                    })
                    .collect();
                println!("{}", blocks.concat());
                count += 1;
            }
            info!(
                "{count} partitions (S({n},{k}) = {})",
                stirling2(n as u32, k as u32)
            );
            Ok(())
        }
    }
}

fn run_alice(
    session: SessionArgs,
    message: &str,
    connect: &str,
    s: u32,
    retry: RetryPolicy,
    max_retries: u32,
    alice_seq: Option<PathBuf>,
) -> Result<(), CliError> {
    let partition = load_partition(&session.partition)?;
    let message_bytes = if message == "-" {
        let mut buf = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| usage(format!("cannot read message from stdin: {e}")))?;
        buf
    } else {
        read_file(Path::new(message), "message")?
    };
    let mut cfg = SessionConfig::new(
        partition,
        s,
        sequence_source(alice_seq.as_deref(), session.seed)?,
    );
    cfg.max_retries = max_retries;
    cfg.m_policy = match retry {
        RetryPolicy::Keep => MPolicy::Keep,
        RetryPolicy::Double => MPolicy::Double,
    };

    let timeout = Duration::from_secs(session.timeout_secs);
    let tcp = connect_tcp(connect, Some(timeout))
        .map_err(|e| CliError::Transport(format!("connect {connect}: {e}")))?;
    debug!("connected to {connect}");

    let recorder = TranscriptRecorder::new();
    let mut channel = recorder.wrap(tcp, Direction::AliceToBob);
    let message_bits = BitString::from_bytes(&message_bytes);
    let outcome = drive_alice(cfg, &message_bits, &mut channel).map_err(protocol_error)?;

    info!(
        "session complete: m={}, attempts={}, key {} bits, ciphertext {} bits",
        outcome.m,
        outcome.attempts,
        outcome.key.bit_len(),
        outcome.ciphertext.len()
    );
    dump_key(session.dump_key.as_deref(), &outcome.key)?;
    write_transcript(session.transcript.as_deref(), &recorder)?;
    Ok(())
}

fn write_transcript(path: Option<&Path>, recorder: &TranscriptRecorder) -> Result<(), CliError> {
    if let Some(path) = path {
        let transcript = recorder.clone().into_transcript();
        let bytes = transcript
            .to_wire_bytes()
            .map_err(|e| CliError::Protocol(e.to_string()))?;
        fs::write(path, &bytes)
            .map_err(|e| usage(format!("cannot write transcript {}: {e}", path.display())))?;
        debug!(
            "transcript: {} frames, {} bytes -> {}",
            transcript.len(),
            bytes.len(),
            path.display()
        );
    }
    Ok(())
}

fn run_bob(
    session: SessionArgs,
    listen: &str,
    out: Option<PathBuf>,
    bob_seq: Option<PathBuf>,
    once: bool,
) -> Result<(), CliError> {
    let partition = load_partition(&session.partition)?;
    let listener = TcpListener::bind(listen)
        .map_err(|e| CliError::Transport(format!("bind {listen}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| CliError::Transport(e.to_string()))?;
    // announced on stdout so callers can discover an ephemeral port
    println!("listening on {local}");
    std::io::stdout().flush().ok();

    let settings = BobSession {
        partition,
        seed: session.seed,
        timeout: Duration::from_secs(session.timeout_secs),
        out,
        bob_seq,
        dump_key: session.dump_key,
        transcript: session.transcript,
    };

    if once {
        let (stream, _) = listener
            .accept()
            .map_err(|e| CliError::Transport(e.to_string()))?;
        return settings.serve(stream);
    }
    // one state machine per connection, each on its own thread
    std::thread::scope(|scope| {
        for stream in listener.incoming() {
            match stream {
                Ok(stream) => {
                    let settings = &settings;
                    scope.spawn(move || {
                        if let Err(e) = settings.serve(stream) {
                            eprintln!("session failed: {}", e.message());
                        }
                    });
                }
                Err(e) => eprintln!("accept failed: {e}"),
            }
        }
    });
    Ok(())
}

struct BobSession {
    partition: SetPartition,
    seed: Option<u64>,
    timeout: Duration,
    out: Option<PathBuf>,
    bob_seq: Option<PathBuf>,
    dump_key: Option<PathBuf>,
    transcript: Option<PathBuf>,
}

impl BobSession {
    fn serve(&self, stream: std::net::TcpStream) -> Result<(), CliError> {
        let peer = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_default();
        debug!("session from {peer}");
        let tcp = accept_tcp(stream, Some(self.timeout))
            .map_err(|e| CliError::Transport(e.to_string()))?;
        let recorder = TranscriptRecorder::new();
        let mut channel = recorder.wrap(tcp, Direction::BobToAlice);
        let cfg = SessionConfig::new(
            self.partition.clone(),
            1, // the responder's amplification is driven by the peer's m
            sequence_source(self.bob_seq.as_deref(), self.seed)?,
        );
        let outcome = drive_bob(cfg, &mut channel).map_err(protocol_error)?;
        let plaintext = outcome
            .plaintext
            .to_bytes()
            .map_err(|e| CliError::Protocol(e.to_string()))?;
        info!(
            "session complete: recovered {} bytes, key {} bits",
            plaintext.len(),
            outcome.key.bit_len()
        );
        write_output(self.out.as_deref(), &plaintext, "recovered message")?;
        dump_key(self.dump_key.as_deref(), &outcome.key)?;
        write_transcript(self.transcript.as_deref(), &recorder)?;
        Ok(())
    }
}

fn run_stats(key: &Path, alpha: f64) -> Result<(), CliError> {
    let bits = read_bits(key, "key")?;
    println!("{} bits from {}", bits.len(), key.display());
    println!(
        "{:<14} {:>14} {:>12}  verdict",
        "test", "statistic", "p-value"
    );

    match monobit(&bits, alpha) {
        Ok(r) => println!(
            "{:<14} {:>14.4} {:>12.6}  {}",
            r.name,
            r.statistic,
            r.p_value,
            if r.pass { "pass" } else { "FAIL" }
        ),
        Err(e) => println!("{:<14} {:>14} {:>12}  n/a ({e})", "monobit", "-", "-"),
    }

    match runs_test(&bits, alpha) {
        Ok(RunsOutcome::Report(r)) => println!(
            "{:<14} {:>14.4} {:>12.6}  {}",
            r.name,
            r.statistic,
            r.p_value,
            if r.pass { "pass" } else { "FAIL" }
        ),
        Ok(RunsOutcome::NotApplicable {
            ones_fraction,
            threshold,
        }) => println!(
            "{:<14} {:>14} {:>12}  n/a (ones fraction {ones_fraction:.4} off 0.5 by >= {threshold:.4})",
            "runs", "-", "-"
        ),
        Err(e) => println!("{:<14} {:>14} {:>12}  n/a ({e})", "runs", "-", "-"),
    }

    match byte_entropy(&bits) {
        Ok(h) => println!(
            "{:<14} {:>14.4} {:>12}  report (bits/byte)",
            "byte-entropy", h, "-"
        ),
        Err(e) => println!("{:<14} {:>14} {:>12}  n/a ({e})", "byte-entropy", "-", "-"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_attack(
    transcript: &Path,
    k: u16,
    k_max: Option<u16>,
    n_max: Option<u16>,
    max_candidates: u64,
    time_limit_secs: u64,
    crib: Option<PathBuf>,
) -> Result<(), CliError> {
    let bytes = read_file(transcript, "transcript")?;
    let session = InterceptedSession::from_wire_bytes(&bytes)
        .map_err(|e| usage(format!("transcript {}: {e}", transcript.display())))?;
    debug!(
        "intercepted: m={}, responder list {} entries, {} match marks, {} ciphertext bits",
        session.m,
        session.responder_list.len(),
        session.match_list.len(),
        session.ciphertext.len()
    );
    let crib_bits = match &crib {
        Some(path) => Some(BitString::from_bytes(&read_file(path, "crib")?)),
        None => None,
    };

    let k_hi = k_max.unwrap_or(k);
    if k_hi < k {
        return Err(usage("k-max must be at least k"));
    }
    let mut any_hit = false;
    for k_try in k..=k_hi {
        let budget = AttackBudget::new(
            n_max.unwrap_or(k_try.saturating_add(3)),
            max_candidates,
            Duration::from_secs(time_limit_secs),
        )
        .map_err(usage)?;
        let result = eve::enumerate_keys(&session, k_try, &budget, crib_bits.as_ref())
            .map_err(|e| CliError::Protocol(e.to_string()))?;
        print!("{}", eve::attack_report(&result));
        any_hit |= result.hit.is_some();
    }
    if crib_bits.is_some() && !any_hit {
        return Err(CliError::NoHit);
    }
    Ok(())
}
