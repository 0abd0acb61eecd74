//! Command-line entry points. Parties are numbered 1 to 3 here and 0 to 2
//! inside the library.

use std::fmt::Write as _;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lthmpc_core::cost::Protocol;
use lthmpc_core::infer::{argmax_rows, max_ulp, plaintext_oracle, Layer, NetworkSpec};
use lthmpc_core::init::init;
use lthmpc_core::lth::link::LinkModel;
use lthmpc_core::net::{Action, AdversaryHook, Hooked, PartyId, ProtoFilter, Rule, PARTIES};
use lthmpc_core::party::Party;
use lthmpc_core::{Error, Mode, Ring};

use crate::engine::{infer, view, Inputs};
use crate::files::{read_network, read_vector, write_network, write_vector, FileError};
use crate::harness::{data_rng, provision, Backend, Cluster, Net, Provisioned, Setup};
use crate::inproc::InProcConfig;
use crate::model::{mlp, unit_inputs};
use crate::report::{comm_report, measure};
use crate::tcp::TcpNet;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_ABORT: u8 = 2;
pub const EXIT_PEER: u8 = 3;
pub const EXIT_MISMATCH: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Protocol(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Protocol(Error::Abort(_)) => EXIT_ABORT,
            CliError::Protocol(Error::Disconnected(_) | Error::Timeout(_)) => EXIT_PEER,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            _ => EXIT_ERROR,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lthmpc", version, about = "Three-party secure inference with trusted-component offload")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run secure inference and write the logits.
    Run(RunArgs),
    /// Run secure inference on all three parties and compare with the plaintext oracle.
    Verify(VerifyArgs),
    /// Compare measured and analytical communication of the offloaded layers.
    Cost(CostArgs),
    /// Write a random fully connected network and inputs.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    SemiHonest,
    Malicious,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::SemiHonest => Mode::SemiHonest,
            ModeArg::Malicious => Mode::Malicious,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    Inproc,
    Tcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Chip,
    Soc,
    Unmetered,
}

impl From<LinkArg> for LinkModel {
    fn from(l: LinkArg) -> LinkModel {
        match l {
            LinkArg::Chip => LinkModel::CHIP,
            LinkArg::Soc => LinkModel::SOC,
            LinkArg::Unmetered => LinkModel::UNMETERED,
        }
    }
}

/// `all` or a party number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    All,
    Party(PartyId),
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Role::All),
            _ => party_number(s).map(Role::Party),
        }
    }
}

fn party_number(s: &str) -> Result<PartyId, String> {
    match s.parse::<u8>() {
        Ok(n @ 1..=3) => Ok(n - 1),
        _ => Err(format!("party must be 1, 2 or 3, got {s:?}")),
    }
}

/// Single-byte tamper: `pA->pB:byteK[@frameI]` flips byte `K` (header
/// included) of the `I`-th online frame party `A` sends to party `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tamper {
    pub from: PartyId,
    pub to: PartyId,
    pub byte: usize,
    pub frame: usize,
}

impl FromStr for Tamper {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("tamper must look like p2->p3:byte0[@frame1], got {s:?}");
        let (route, at) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = route.split_once("->").ok_or_else(bad)?;
        let from = party_number(a.strip_prefix('p').ok_or_else(bad)?)?;
        let to = party_number(b.strip_prefix('p').ok_or_else(bad)?)?;
        if from == to {
            return Err("tamper needs two different parties".into());
        }
        let (byte, frame) = match at.split_once('@') {
            Some((x, f)) => (x, f.strip_prefix("frame").ok_or_else(bad)?.parse().map_err(|_| bad())?),
            None => (at, 0),
        };
        let byte = byte.strip_prefix("byte").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Tamper { from, to, byte, frame })
    }
}

impl Tamper {
    pub fn hook(&self) -> AdversaryHook {
        AdversaryHook {
            corrupted: self.from,
            rules: vec![Rule {
                proto: ProtoFilter::Online,
                to: Some(self.to),
                index: self.frame,
                action: Action::Xor { offset: self.byte, mask: 0xff },
            }],
        }
    }
}

/// `N=FP`: party `N` uses `FP` fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartyFrac {
    pub party: PartyId,
    pub frac: u32,
}

impl FromStr for PartyFrac {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (p, f) = s.split_once('=').ok_or_else(|| format!("expected N=FP, got {s:?}"))?;
        Ok(PartyFrac { party: party_number(p)?, frac: f.parse().map_err(|_| format!("bad fractional bits {f:?}"))? })
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, value_enum, default_value = "semi-honest")]
    pub mode: ModeArg,
    /// Ring bit width l.
    #[arg(long = "ring-bits", default_value_t = 32)]
    pub bits: u32,
    /// Fractional bits fp.
    #[arg(long = "frac-bits", default_value_t = 13)]
    pub frac: u32,
    #[arg(long, value_enum, default_value = "unmetered")]
    pub link: LinkArg,
    /// Network description file.
    #[arg(long)]
    pub net: PathBuf,
    /// Input vector file, sample-major.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Run one operation per layer instead of fusing.
    #[arg(long)]
    pub no_fuse: bool,
    /// Receive timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
}

impl Common {
    fn ring(&self) -> Result<Ring, CliError> {
        Ok(Ring::new(self.bits, self.frac)?)
    }

    fn setup(&self, ring: Ring, spec: &NetworkSpec) -> Setup {
        let mut s = Setup::new(ring, self.mode.into(), self.seed);
        s.network_hash = spec.hash();
        s.link = self.link.into();
        s
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// `all` runs the three parties in this process; a party number runs
    /// that party alone over TCP.
    #[arg(long, default_value = "all")]
    pub role: Role,
    #[arg(long, value_enum, default_value = "inproc")]
    pub transport: TransportArg,
    /// Comma-separated addresses of parties 1, 2 and 3, for `--role N`.
    #[arg(long, value_delimiter = ',')]
    pub peers: Vec<SocketAddr>,
    /// Logits output file; written only on success.
    #[arg(long, default_value = "logits.bin")]
    pub out: PathBuf,
    /// Communication report file; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Single-byte tamper, e.g. `p2->p3:byte0@frame1`.
    #[arg(long)]
    pub tamper: Option<Tamper>,
    /// Give one party different fractional bits, e.g. `2=12`.
    #[arg(long = "party-frac")]
    pub party_frac: Vec<PartyFrac>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fractional bits the oracle assumes; defaults to the engine's.
    #[arg(long = "oracle-frac-bits")]
    pub oracle_frac: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CostProtocol {
    Relu,
    Softmax,
    Norm,
    Maxpool,
    /// Every protocol at three sizes.
    All,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(value_enum, default_value = "all")]
    pub protocol: CostProtocol,
    /// Number of inputs for relu, softmax and norm.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Max-pool input side.
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    /// Max-pool window side.
    #[arg(long, default_value_t = 2)]
    pub w: usize,
    /// Max-pool stride.
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub dir: PathBuf,
    /// Layer widths.
    #[arg(long, value_delimiter = ',', default_value = "784,128,128,10")]
    pub widths: Vec<usize>,
    /// Number of input samples.
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value = "net")]
    pub name: String,
    #[arg(long = "ring-bits", default_value_t = 32)]
    pub bits: u32,
    #[arg(long = "frac-bits", default_value_t = 13)]
    pub frac: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Runs a command, writing human-readable output to `out`.
pub fn execute(cmd: &Command, out: &mut String) -> Result<(), CliError> {
    match cmd {
        Command::Run(a) => cmd_run(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Cost(a) => cmd_cost(a, out),
        Command::Gen(a) => cmd_gen(a, out),
    }
}

fn load(c: &Common, ring: Ring, with_params: bool) -> Result<(NetworkSpec, Vec<u64>, usize), CliError> {
    let spec = read_network(ring, &c.net, with_params)?;
    let x = read_vector(ring, &c.input)?;
    let n0 = spec.input.len();
    if x.is_empty() || x.len() % n0 != 0 {
        return Err(CliError::Usage(format!("input holds {} values, not a whole number of {n0}-value samples", x.len())));
    }
    let batch = x.len() / n0;
    Ok((spec, x, batch))
}

fn cmd_run(a: &RunArgs, out: &mut String) -> Result<(), CliError> {
    let c = &a.common;
    let ring = c.ring()?;
    let (logits, report) = match a.role {
        Role::All => run_local(a, ring)?,
        Role::Party(id) => run_single(a, ring, id)?,
    };
    write_vector(ring, &a.out, &logits)?;
    match &a.report {
        Some(p) => std::fs::write(p, &report).map_err(|source| FileError::Io { path: p.clone(), source })?,
        None => out.push_str(&report),
    }
    Ok(())
}

fn run_header(a: &RunArgs, ring: Ring, batch: usize, backend: &str) -> String {
    format!(
        "mode={} ring_bits={} frac_bits={} backend={backend} link={} batch={batch} fused={}\n",
        Mode::from(a.common.mode),
        ring.bits(),
        ring.frac(),
        LinkModel::from(a.common.link).name,
        !a.common.no_fuse
    )
}

fn run_local(a: &RunArgs, ring: Ring) -> Result<(Vec<u64>, String), CliError> {
    let c = &a.common;
    let (spec, x, batch) = load(c, ring, true)?;
    let timeout = Duration::from_secs(c.timeout);
    let backend = match a.transport {
        TransportArg::Inproc => Backend::InProc(InProcConfig { timeout, ..InProcConfig::default() }),
        TransportArg::Tcp => Backend::Tcp(timeout),
    };
    let base = c.setup(ring, &spec);
    let mut setups = [base.clone(), base.clone(), base];
    for pf in &a.party_frac {
        setups[pf.party as usize].ring = Ring::new(ring.bits(), pf.frac)?;
    }
    let cluster = Cluster::init_each(&setups, backend)?;
    let hook = a.tamper.map(|t| t.hook());
    let fused = !c.no_fuse;
    let run = cluster.run(hook.as_ref(), |p| {
        let (local, input) = view(p.id(), &spec, &x);
        infer(p, &Inputs { spec: &local, input, batch, fused })
    })?;
    let report = run_header(a, ring, batch, backend.name()) + &comm_report(&run.meter(), &run.states.clone().map(|s| s.link.meter));
    let [l0, l1, l2] = run.outputs()?;
    if l0 != l1 || l1 != l2 {
        return Err(CliError::Protocol(Error::abort("parties opened different logits")));
    }
    Ok((l0, report))
}

fn run_single(a: &RunArgs, ring: Ring, id: PartyId) -> Result<(Vec<u64>, String), CliError> {
    let c = &a.common;
    if a.transport != TransportArg::Tcp {
        return Err(CliError::Usage("a single party needs --transport tcp".into()));
    }
    let peers: [SocketAddr; PARTIES] =
        a.peers.clone().try_into().map_err(|_| CliError::Usage("--peers needs three addresses".into()))?;
    let owner = id == crate::engine::MODEL_OWNER;
    let client = id == crate::engine::CLIENT;
    let spec = read_network(ring, &c.net, owner)?;
    let x = if client { read_vector(ring, &c.input)? } else { Vec::new() };
    let n0 = spec.input.len();
    // Every party learns the batch size from the input file's header.
    let batch = batch_from_header(&c.input)? / n0;
    let setup = c.setup(ring, &spec);
    let Provisioned { params, device, seed } = provision(&[setup.clone(), setup.clone(), setup])[id as usize].clone();
    let timeout = Duration::from_secs(c.timeout);
    let listener = TcpListener::bind(peers[id as usize]).map_err(|e| Error::Transport(e.to_string()))?;
    let tcp = TcpNet::connect(id, listener, &peers, timeout)?;
    let net: Net = match a.tamper.filter(|t| t.from == id) {
        Some(t) => Box::new(Hooked::new(tcp, &t.hook())?),
        None => Box::new(tcp),
    };
    let mut party: Party<Net> = init(net, &params, device, seed)?;
    party.st.meter.clear();
    party.st.link.meter.clear();
    let logits = infer(&mut party, &Inputs { spec: &spec, input: client.then_some(&x[..]), batch, fused: !c.no_fuse })?;
    let (st, _net) = party.into_parts();
    let mut links: [_; PARTIES] = Default::default();
    links[id as usize] = st.link.meter.clone();
    let report = run_header(a, ring, batch, "tcp") + &format!("party={}\n", id + 1) + &comm_report(&st.meter, &links);
    Ok((logits, report))
}

fn batch_from_header(path: &std::path::Path) -> Result<usize, CliError> {
    use std::io::Read;
    let mut head = [0u8; 8];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|source| FileError::Io { path: path.to_owned(), source })?;
    Ok(u64::from_le_bytes(head) as usize)
}

/// Layers whose outputs carry bounded rather than exact error.
fn bounded_layers(spec: &NetworkSpec) -> usize {
    spec.layers
        .iter()
        .filter(|l| matches!(l, Layer::Softmax | Layer::BatchNorm { .. } | Layer::LayerNorm { .. }))
        .count()
}

fn cmd_verify(a: &VerifyArgs, out: &mut String) -> Result<(), CliError> {
    let c = &a.common;
    let ring = c.ring()?;
    let (spec, x, batch) = load(c, ring, true)?;
    let cluster = Cluster::init(&c.setup(ring, &spec), Backend::default())?;
    let fused = !c.no_fuse;
    let run = cluster.run(None, |p| {
        let (local, input) = view(p.id(), &spec, &x);
        infer(p, &Inputs { spec: &local, input, batch, fused })
    })?;
    let [secure, _, _] = run.outputs()?;
    let oracle_ring = Ring::new(ring.bits(), a.oracle_frac.unwrap_or(ring.frac()))?;
    let want = plaintext_oracle(oracle_ring, &spec, &x)?;
    let width = spec.output()?.len();
    let tolerance = 2 * bounded_layers(&spec) as u64;
    let worst = max_ulp(ring, &secure, &want);
    let agree = argmax_rows(ring, &secure, width).iter().zip(argmax_rows(ring, &want, width)).filter(|(s, w)| **s == *w).count();
    let differing = secure.iter().zip(&want).filter(|(s, w)| s != w).count();
    let _ = writeln!(
        out,
        "samples={batch} outputs={} max_ulp={worst} tolerance_ulp={tolerance} differing={differing} argmax_agree={agree}/{batch}",
        secure.len()
    );
    for (i, (s, w)) in secure.iter().zip(&want).enumerate().filter(|(_, (s, w))| s != w).take(10) {
        let _ = writeln!(out, "element={i} secure={} oracle={} ulp={}", ring.signed(*s), ring.signed(*w), max_ulp(ring, &[*s], &[*w]));
    }
    let pass = worst <= tolerance && agree == batch;
    let _ = writeln!(out, "verify={}", if pass { "pass" } else { "fail" });
    if pass {
        Ok(())
    } else {
        Err(CliError::Mismatch(format!("secure output differs from oracle by up to {worst} ulp")))
    }
}

fn cmd_cost(a: &CostArgs, out: &mut String) -> Result<(), CliError> {
    let protocols = match a.protocol {
        CostProtocol::Relu => vec![Protocol::Relu { n: a.n }],
        CostProtocol::Softmax => vec![Protocol::Softmax { n: a.n }],
        CostProtocol::Norm => vec![Protocol::Norm { n: a.n }],
        CostProtocol::Maxpool => vec![Protocol::MaxPool { m: a.m, w: a.w, s: a.s }],
        CostProtocol::All => default_cost_sizes(),
    };
    for p in protocols {
        let row = measure(p, Ring::DEFAULT, a.seed)?;
        let an = row.analytical;
        let _ = writeln!(
            out,
            "{} analytical_rounds={} analytical_bytes_per_party={:.2} analytical_link_per_party={:.2}",
            p.describe(),
            an.rounds,
            an.network,
            an.link
        );
        let _ = writeln!(out, "{}", row.record());
    }
    Ok(())
}

/// Three sizes per protocol.
pub fn default_cost_sizes() -> Vec<Protocol> {
    let mut v = Vec::new();
    for n in [300, 1000, 4096] {
        v.push(Protocol::Relu { n });
        v.push(Protocol::Softmax { n });
        v.push(Protocol::Norm { n });
    }
    for (m, w, s) in [(4, 2, 2), (8, 2, 2), (9, 3, 3), (12, 3, 1)] {
        v.push(Protocol::MaxPool { m, w, s });
    }
    v
}

fn cmd_gen(a: &GenArgs, out: &mut String) -> Result<(), CliError> {
    let ring = Ring::new(a.bits, a.frac)?;
    if a.widths.len() < 2 {
        return Err(CliError::Usage("need at least two widths".into()));
    }
    let mut rng = data_rng(a.seed);
    let spec = mlp(ring, &a.widths, &mut rng)?;
    let net = write_network(ring, &a.dir, &a.name, &spec)?;
    let x = unit_inputs(ring, a.batch * a.widths[0], &mut rng)?;
    let input = a.dir.join(format!("{}.input.bin", a.name));
    write_vector(ring, &input, &x)?;
    let _ = writeln!(out, "net={} input={}", net.display(), input.display());
    Ok(())
}
