//! `shufflebits` command-line tool: key generation, envelope encryption and
//! decryption, inspection, throughput benchmarking, and the attack demo.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng, TryRngCore};

use shufflebits::codec::{self, FeatureBatch, KeySource};
use shufflebits::keystream::{self, KeyMode, MasterSecret, Nonce};
use shufflebits::wire::{self, EnvelopeHeader};
use shufflebits::{attack, bitperm};

#[derive(Parser)]
#[command(
    name = "shufflebits",
    version,
    about = "Bit-position permutation cipher for binary32 feature batches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Fixed,
    PerRequest,
    PerElement,
}

impl From<ModeArg> for KeyMode {
    fn from(mode: ModeArg) -> KeyMode {
        match mode {
            ModeArg::Fixed => KeyMode::FixedKey,
            ModeArg::PerRequest => KeyMode::PerRequest,
            ModeArg::PerElement => KeyMode::PerElement,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a 32-byte master secret file
    Keygen {
        /// Output path for the secret
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a raw little-endian binary32 file into a .shfb envelope
    Encrypt {
        /// Input file of raw little-endian binary32 values
        #[arg(long = "in")]
        input: PathBuf,
        /// Output envelope path
        #[arg(long)]
        out: PathBuf,
        /// Master secret file (32 bytes)
        #[arg(long, env = "SHUFFLEBITS_MASTER")]
        master: Option<PathBuf>,
        /// Nonce as 24 hex characters; required unless --random-nonce
        #[arg(long)]
        nonce: Option<String>,
        /// Draw a fresh nonce from system entropy and print it
        #[arg(long)]
        random_nonce: bool,
        /// Key assignment mode
        #[arg(long, value_enum, default_value = "per-request")]
        mode: ModeArg,
        /// Fixed-mode encryption key: 32 comma-separated bit positions
        #[arg(long)]
        key: Option<String>,
        /// Feature dimensionality recorded in the envelope
        #[arg(long, default_value_t = 1)]
        dim: u32,
    },
    /// Decrypt a .shfb envelope back to raw binary32 bytes
    Decrypt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Master secret file; required for per-request/per-element envelopes
        #[arg(long, env = "SHUFFLEBITS_MASTER")]
        master: Option<PathBuf>,
        /// Fixed-mode key (same key that encrypted; inverted internally)
        #[arg(long)]
        key: Option<String>,
    },
    /// Print envelope header fields without decrypting
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Compare scalar and bit-sliced encryption throughput
    Bench {
        /// Number of random words to encrypt
        #[arg(long, default_value_t = 1 << 20)]
        words: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run the attribute-probe and key-recovery demonstration
    AttackDemo {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Emit the report as JSON instead of plain text
        #[arg(long)]
        json: bool,
    },
    /// Print the 32-position bit-frequency profile of an envelope payload
    AnalyzeFreq {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {:#}", error);
            ExitCode::from(1)
        }
    }
}

fn usage_error(message: &str) -> ! {
    eprintln!("error: {}", message);
    eprintln!("For more information, try '--help'.");
    std::process::exit(2);
}

/// Writes through a temporary file and an atomic rename so a crash never
/// leaves a torn output behind.
fn write_atomic(path: &Path, bytes: &[u8], owner_only: bool) -> Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    if owner_only {
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            tmp.as_file()
                .set_permissions(fs::Permissions::from_mode(0o600))
                .with_context(|| format!("restricting permissions on {}", path.display()))?;
        }
    }
    tmp.persist(path)
        .with_context(|| format!("renaming into place at {}", path.display()))?;
    Ok(())
}

fn load_master(path: Option<&PathBuf>) -> Result<MasterSecret> {
    let path = match path {
        Some(path) => path,
        None => usage_error("--master (or SHUFFLEBITS_MASTER) is required for this mode"),
    };
    let bytes =
        fs::read(path).with_context(|| format!("reading master secret {}", path.display()))?;
    MasterSecret::from_slice(&bytes)
        .with_context(|| format!("master secret {} is malformed", path.display()))
}

fn parse_nonce(text: &str) -> Result<Nonce> {
    let bytes = hex::decode(text).context("nonce must be hexadecimal")?;
    if bytes.len() != Nonce::LEN {
        bail!("nonce must be 24 hex characters (12 bytes), got {}", text.len());
    }
    Ok(Nonce::from_slice(&bytes).expect("length checked"))
}

fn parse_key(text: &str) -> Result<bitperm::PermutationKey> {
    text.parse::<bitperm::PermutationKey>()
        .context("invalid --key")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Keygen { out } => keygen(&out),
        Command::Encrypt {
            input,
            out,
            master,
            nonce,
            random_nonce,
            mode,
            key,
            dim,
        } => encrypt(&input, &out, master.as_ref(), nonce.as_deref(), random_nonce, mode, key.as_deref(), dim),
        Command::Decrypt {
            input,
            out,
            master,
            key,
        } => decrypt(&input, &out, master.as_ref(), key.as_deref()),
        Command::Inspect { input } => inspect(&input),
        Command::Bench { words, seed } => bench(words, seed),
        Command::AttackDemo { seed, json } => attack_demo(seed, json),
        Command::AnalyzeFreq { input } => analyze_freq(&input),
    }
}

fn keygen(out: &Path) -> Result<()> {
    let master = keystream::generate_master().context("generating master secret")?;
    write_atomic(out, master.as_bytes(), true)?;
    println!("wrote master secret to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn encrypt(
    input: &Path,
    out: &Path,
    master: Option<&PathBuf>,
    nonce: Option<&str>,
    random_nonce: bool,
    mode: ModeArg,
    key: Option<&str>,
    dim: u32,
) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading input {}", input.display()))?;
    if bytes.len() % 4 != 0 {
        bail!(
            "input {} is {} bytes; binary32 input must be a multiple of 4",
            input.display(),
            bytes.len()
        );
    }
    if dim == 0 {
        usage_error("--dim must be at least 1");
    }
    let words = bytes.len() / 4;
    if words % dim as usize != 0 {
        bail!(
            "input holds {} words, which is not divisible by --dim {}",
            words,
            dim
        );
    }
    let count = (words / dim as usize) as u64;
    let batch = FeatureBatch::from_le_bytes(&bytes, count, dim)?;

    let (source, header_nonce) = match mode {
        ModeArg::Fixed => {
            if nonce.is_some() || random_nonce {
                usage_error("fixed mode takes --key, not a nonce");
            }
            let key = match key {
                Some(text) => parse_key(text)?,
                None => usage_error("fixed mode requires --key"),
            };
            (KeySource::Fixed(key), Nonce::new([0; 12]))
        }
        ModeArg::PerRequest | ModeArg::PerElement => {
            if key.is_some() {
                usage_error("--key is only valid in fixed mode");
            }
            let master = load_master(master)?;
            let nonce = match (nonce, random_nonce) {
                (Some(_), true) => usage_error("give either --nonce or --random-nonce, not both"),
                (Some(text), false) => {
                    let nonce = parse_nonce(text)?;
                    eprintln!(
                        "warning: explicit nonce supplied; reusing a nonce under the same \
                         master secret reuses keys"
                    );
                    nonce
                }
                (None, true) => {
                    let mut bytes = [0u8; 12];
                    rand::rngs::OsRng
                        .try_fill_bytes(&mut bytes)
                        .map_err(|_| anyhow::anyhow!("system entropy unavailable"))?;
                    let nonce = Nonce::new(bytes);
                    println!("nonce: {}", nonce);
                    nonce
                }
                (None, false) => usage_error("--nonce or --random-nonce is required"),
            };
            let source = match mode {
                ModeArg::PerRequest => KeySource::PerRequest {
                    master,
                    nonce,
                },
                _ => KeySource::PerElement {
                    master,
                    nonce,
                },
            };
            (source, nonce)
        }
    };

    // One key for the whole batch means the bit-sliced fast path applies.
    let cipher = match &source {
        KeySource::Fixed(key) => codec::encrypt_batch_bitsliced(&batch, key),
        KeySource::PerRequest { master, nonce } => {
            let key = keystream::derive_request_key(master, nonce);
            codec::encrypt_batch_bitsliced(&batch, &key)
        }
        KeySource::PerElement { .. } => codec::encrypt_batch(&batch, &source)?,
    };

    let header = EnvelopeHeader {
        mode: source.mode(),
        cascade: false,
        nonce: header_nonce,
        count,
        dim,
    };
    let envelope = wire::write_envelope(&header, &cipher)?;
    write_atomic(out, &envelope, false)?;
    println!(
        "encrypted {} vectors x {} components into {}",
        count,
        dim,
        out.display()
    );
    Ok(())
}

fn decrypt(input: &Path, out: &Path, master: Option<&PathBuf>, key: Option<&str>) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading envelope {}", input.display()))?;
    let (header, cipher) =
        wire::read_envelope(&bytes).with_context(|| format!("parsing {}", input.display()))?;

    let source = match header.mode {
        KeyMode::FixedKey => {
            let key = match key {
                Some(text) => parse_key(text)?,
                None => usage_error("envelope uses fixed mode; supply --key"),
            };
            KeySource::Fixed(key)
        }
        KeyMode::PerRequest => {
            if key.is_some() {
                usage_error("envelope uses per-request mode; supply --master, not --key");
            }
            KeySource::PerRequest {
                master: load_master(master)?,
                nonce: header.nonce,
            }
        }
        KeyMode::PerElement => {
            if key.is_some() {
                usage_error("envelope uses per-element mode; supply --master, not --key");
            }
            KeySource::PerElement {
                master: load_master(master)?,
                nonce: header.nonce,
            }
        }
    };
    codec::ensure_mode(&source, header.mode)?;

    let plain = match &source {
        KeySource::Fixed(key) => codec::encrypt_batch_bitsliced(&cipher, &key.invert()),
        KeySource::PerRequest { master, nonce } => {
            let key = keystream::derive_request_key(master, nonce).invert();
            codec::encrypt_batch_bitsliced(&cipher, &key)
        }
        KeySource::PerElement { .. } => codec::decrypt_batch(&cipher, &source)?,
    };
    write_atomic(out, &plain.to_le_bytes(), false)?;
    println!("decrypted {} into {}", input.display(), out.display());
    Ok(())
}

fn inspect(input: &Path) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading envelope {}", input.display()))?;
    let (header, payload) =
        wire::read_envelope(&bytes).with_context(|| format!("parsing {}", input.display()))?;
    println!("magic:    SHFB");
    println!("version:  {}", wire::VERSION);
    println!("mode:     {}", header.mode);
    println!("dtype:    binary32");
    println!("cascade:  {}", if header.cascade { 1 } else { 0 });
    println!("nonce:    {}", header.nonce);
    println!("count:    {}", header.count);
    println!("dim:      {}", header.dim);
    println!("checksum: {:#010x}", wire::crc32(&payload.to_le_bytes()));
    println!("payload:  {} bytes", payload.len() * 4);
    Ok(())
}

fn bench(words: usize, seed: u64) -> Result<()> {
    use rand::seq::SliceRandom;

    if words == 0 {
        usage_error("--words must be at least 1");
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut data = vec![0u8; words * 4];
    rng.fill_bytes(&mut data);
    let batch = FeatureBatch::from_le_bytes(&data, words as u64, 1)?;
    let mut positions: Vec<u8> = (0..32).collect();
    positions.shuffle(&mut rng);
    let key = bitperm::PermutationKey::from_positions(&positions).expect("shuffled positions");

    let time = |f: &dyn Fn() -> FeatureBatch| -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            let out = f();
            let elapsed = start.elapsed().as_secs_f64();
            assert_eq!(out.len(), words);
            best = best.min(elapsed);
        }
        words as f64 / best
    };

    let source = KeySource::Fixed(key);
    let scalar_rate = time(&|| codec::encrypt_batch(&batch, &source).expect("fixed-key encrypt"));
    let bitsliced_rate = time(&|| codec::encrypt_batch_bitsliced(&batch, &key));

    println!("words:     {}", words);
    println!("scalar:    {:.0} words/s", scalar_rate);
    println!("bitsliced: {:.0} words/s", bitsliced_rate);
    println!("speedup:   {:.2}x", bitsliced_rate / scalar_rate);
    Ok(())
}

fn attack_demo(seed: u64, json: bool) -> Result<()> {
    let config = attack::HarnessConfig {
        seed,
        ..attack::HarnessConfig::default()
    };
    let report = attack::run_demo(&config).context("running attack demo")?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("seed:                      {}", report.seed);
        println!(
            "plain_balanced_accuracy:   {:.4}",
            report.plain_balanced_accuracy
        );
        println!(
            "cipher_balanced_accuracy:  {:.4}",
            report.cipher_balanced_accuracy
        );
        println!("keyspace:                  {}", report.keyspace);
        println!(
            "frequency_attack_result:   exact_recovery={} ambiguous={}",
            report.frequency_attack_result.exact_recovery,
            report.frequency_attack_result.ambiguous
        );
    }
    Ok(())
}

fn analyze_freq(input: &Path) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading envelope {}", input.display()))?;
    let (_, payload) =
        wire::read_envelope(&bytes).with_context(|| format!("parsing {}", input.display()))?;
    let profile = codec::bit_frequency_profile(&payload)
        .with_context(|| format!("profiling {}", input.display()))?;
    for (position, frequency) in profile.iter().enumerate() {
        println!("bit {:2}: {:.6}", position, frequency);
    }
    Ok(())
}
