use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maptrace::apps::{leakcheck, swapdemo, DirStore, MemoryStore, RemoteStore};
use maptrace::codegen::{compile, CompileError};
use maptrace::image::ProgramImage;
use maptrace::mapfmt;
use maptrace::oracle::check::differential_check;
use maptrace::oracle::gen::{generate_program, FuzzConfig};
use maptrace::tracer::emit::{to_dot, to_json};
use maptrace::tracer::trace_graph;
use maptrace::transport::{load_snapshot, remote_snapshot, save_snapshot, serve, Client};
use maptrace::vm::{image_hash, Snapshot, Vm, VmConfig};

#[derive(Parser)]
#[command(name = "maptrace", version, about = "Compile, run and precisely trace MT programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a source file to a program image (.mtb).
    Compile {
        src: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run an image and print the guest output.
    Run {
        image: PathBuf,
        #[command(flatten)]
        vm: VmArgs,
        /// Write a snapshot (.mts) when main is about to return.
        #[arg(long, value_name = "FILE")]
        snapshot: Option<PathBuf>,
        /// Take the snapshot after this many steps instead.
        #[arg(long, requires = "snapshot")]
        snapshot_at: Option<u64>,
    },
    /// Serve a halted guest over the debug protocol to one client.
    Serve {
        image: PathBuf,
        #[arg(long, value_name = "HOST:PORT")]
        listen: String,
        #[command(flatten)]
        vm: VmArgs,
        /// Execute this many steps before accepting the client.
        #[arg(long, default_value_t = 0)]
        steps: u64,
        /// Execute until main is about to return before accepting.
        #[arg(long, conflicts_with = "steps")]
        at_exit: bool,
    },
    /// Trace a snapshot or a remote guest and emit the pointer graph.
    Trace {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_name = "FILE")]
        dot: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
    /// Report live chunks the precise trace cannot reach.
    Leakcheck {
        #[command(flatten)]
        src: Source,
        /// Also write the report as JSON.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
    /// Run under a heap cap, swapping chunks out to a store.
    Swapdemo {
        image: PathBuf,
        #[arg(long, value_name = "BYTES")]
        cap: u64,
        #[arg(long, value_enum, default_value_t = StoreKind::Memory)]
        store: StoreKind,
        /// Directory for `--store dir`.
        #[arg(required_if_eq("store", "dir"))]
        path: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50_000_000)]
        max_steps: u64,
        /// Print every swap event.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Differential check over generated programs.
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = FuzzConfig::default().seed)]
        seed: u64,
        /// Bias generation towards union stores.
        #[arg(long)]
        union_heavy: bool,
        /// Print the source of every failing program.
        #[arg(long)]
        show_failures: bool,
    },
}

#[derive(Args)]
struct VmArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "BYTES")]
    heap_cap: Option<u64>,
    #[arg(long, default_value_t = 100_000_000)]
    max_steps: u64,
}

impl VmArgs {
    fn config(&self) -> VmConfig {
        VmConfig { seed: self.seed, heap_cap: self.heap_cap.unwrap_or(VmConfig::default().heap_cap) }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SourceSel {
    #[arg(long, value_name = "FILE")]
    snapshot: Option<PathBuf>,
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
}

#[derive(Args)]
struct Source {
    #[command(flatten)]
    sel: SourceSel,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StoreKind {
    Memory,
    Dir,
}

enum Fail {
    Found(String),
    Usage(String),
    Internal(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Found(_) => 1,
            Fail::Usage(_) => 2,
            Fail::Internal(_) => 3,
        }
    }
}

type Res = Result<(), Fail>;

fn internal(e: impl std::fmt::Display) -> Fail {
    Fail::Internal(e.to_string())
}

fn read(p: &Path) -> Result<Vec<u8>, Fail> {
    fs::read(p).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))
}

fn write(p: &Path, data: impl AsRef<[u8]>) -> Res {
    fs::write(p, data).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))
}

fn load_image(p: &Path) -> Result<Arc<ProgramImage>, Fail> {
    let bytes = read(p)?;
    mapfmt::decode(&bytes).map(Arc::new).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))
}

fn load_source(src: &Source) -> Result<(Arc<ProgramImage>, Snapshot), Fail> {
    let img = load_image(&src.image)?;
    let hash = image_hash(&img);
    let snap = match (&src.sel.snapshot, &src.sel.connect) {
        (Some(f), _) => {
            load_snapshot(&read(f)?, Some(&hash)).map_err(|e| Fail::Usage(format!("{}: {e}", f.display())))?
        }
        (None, Some(addr)) => {
            let stream = TcpStream::connect(addr).map_err(|e| Fail::Usage(format!("{addr}: {e}")))?;
            let mut c = Client::new(stream);
            let s = remote_snapshot(&mut c).map_err(internal)?;
            if s.image_hash != hash {
                return Err(Fail::Usage(format!("{addr}: guest runs a different image")));
            }
            s
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    Ok((img, snap))
}

fn cmd_compile(src: &Path, out: &Path) -> Res {
    let text = String::from_utf8(read(src)?).map_err(|e| Fail::Usage(format!("{}: {e}", src.display())))?;
    match compile(&text) {
        Ok(img) => write(out, mapfmt::encode(&img)),
        Err(CompileError::Diagnostics(ds)) => {
            let name = src.display().to_string();
            for d in &ds {
                eprintln!("{}", d.render(&name));
            }
            Err(Fail::Found(format!("{} diagnostic(s)", ds.len())))
        }
        Err(e) => Err(internal(e)),
    }
}

fn cmd_run(image: &Path, vm_args: &VmArgs, snapshot: Option<&Path>, at: Option<u64>) -> Res {
    let img = load_image(image)?;
    let mut vm = Vm::new(img, vm_args.config());
    let mut taken = false;
    let mut printed = 0;
    let flush = |vm: &Vm, printed: &mut usize| {
        for v in &vm.output[*printed..] {
            println!("{v}");
        }
        *printed = vm.output.len();
    };
    let result = loop {
        if let Some(f) = snapshot.filter(|_| !taken) {
            let due = match at {
                Some(n) => vm.steps >= n,
                None => vm.at_main_exit(),
            };
            if due || (vm.finished && at.is_some()) {
                write(f, save_snapshot(&vm.capture_snapshot()))?;
                taken = true;
            }
        }
        if vm.finished {
            break Ok(());
        }
        if vm.steps >= vm_args.max_steps {
            break Err(Fail::Found(format!("step limit {} reached", vm_args.max_steps)));
        }
        if let Err(t) = vm.step() {
            break Err(Fail::Found(format!("trap at step {}: {t}", vm.steps)));
        }
        if vm.output.len() > printed {
            flush(&vm, &mut printed);
        }
    };
    flush(&vm, &mut printed);
    if snapshot.is_some() && !taken {
        eprintln!("warning: snapshot point never reached");
    }
    result
}

fn cmd_serve(image: &Path, listen: &str, vm_args: &VmArgs, steps: u64, at_exit: bool) -> Res {
    let img = load_image(image)?;
    let mut vm = Vm::new(img, vm_args.config());
    while !vm.finished && (if at_exit { !vm.at_main_exit() } else { vm.steps < steps }) {
        vm.step().map_err(|t| Fail::Found(format!("trap at step {}: {t}", vm.steps)))?;
    }
    let listener = TcpListener::bind(listen).map_err(|e| Fail::Usage(format!("{listen}: {e}")))?;
    eprintln!("listening on {} (step {})", listener.local_addr().map_err(internal)?, vm.steps);
    let vm = serve(vm, &listener).map_err(internal)?;
    for v in &vm.output {
        println!("{v}");
    }
    eprintln!("client disconnected at step {}", vm.steps);
    Ok(())
}

fn cmd_trace(src: &Source, dot: Option<&Path>, json: Option<&Path>) -> Res {
    let (img, snap) = load_source(src)?;
    let g = trace_graph(&snap, &img).map_err(|e| Fail::Found(format!("trace failed: {e}")))?;
    if let Some(f) = dot {
        write(f, to_dot(&g, &img.types))?;
    }
    if let Some(f) = json {
        write(f, to_json(&g, &img.types))?;
    }
    if dot.is_none() && json.is_none() {
        print!("{}", to_dot(&g, &img.types));
    }
    eprintln!("{} nodes, {} edges", g.nodes.len(), g.edges.len());
    Ok(())
}

fn cmd_leakcheck(src: &Source, json: Option<&Path>) -> Res {
    let (img, snap) = load_source(src)?;
    let report = leakcheck(&snap, &img).map_err(|e| Fail::Found(format!("trace failed: {e}")))?;
    print!("{report}");
    if let Some(f) = json {
        write(f, serde_json::to_string_pretty(&report).map_err(internal)? + "\n")?;
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(Fail::Found(format!("{} leaked chunk(s)", report.leaks.len())))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_swapdemo(
    image: &Path,
    cap: u64,
    store: StoreKind,
    path: Option<&Path>,
    seed: u64,
    max_steps: u64,
    verbose: bool,
) -> Res {
    let img = load_image(image)?;
    let mut mem = MemoryStore::default();
    let mut dir;
    let store: &mut dyn RemoteStore = match store {
        StoreKind::Memory => &mut mem,
        StoreKind::Dir => {
            let p = path.ok_or_else(|| Fail::Usage("--store dir needs a PATH".into()))?;
            dir = DirStore::new(p).map_err(|e| Fail::Usage(format!("{}: {e}", p.display())))?;
            &mut dir
        }
    };
    let run = swapdemo(img, VmConfig { seed, heap_cap: cap }, max_steps, store, true)
        .map_err(|e| Fail::Found(format!("swap failed: {e}")))?;
    for v in &run.output {
        println!("{v}");
    }
    if verbose {
        for e in &run.events {
            eprintln!("{e:?}");
        }
    }
    eprintln!(
        "steps={} swap_outs={} swap_ins={} audit_failures={}",
        run.steps,
        run.swap_outs(),
        run.swap_ins(),
        run.audit_failures.len()
    );
    for a in &run.audit_failures {
        eprintln!("audit: {a}");
    }
    if run.audit_failures.is_empty() {
        Ok(())
    } else {
        Err(Fail::Found("stale addresses or sentinels after swapping".into()))
    }
}

fn cmd_fuzz(iters: usize, seed: u64, union_heavy: bool, show: bool) -> Res {
    let base = if union_heavy { FuzzConfig::union_heavy(seed) } else { FuzzConfig { seed, ..FuzzConfig::default() } };
    let cfg = FuzzConfig { iterations: iters, ..base };
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let idx: Vec<usize> = (0..iters).collect();
    let lines: Vec<(bool, String, String)> = std::thread::scope(|s| {
        let handles: Vec<_> = idx
            .chunks(iters.div_ceil(workers).max(1))
            .map(|part| {
                let cfg = &cfg;
                s.spawn(move || {
                    part.iter()
                        .map(|&i| {
                            let src = generate_program(cfg, i as u64);
                            match compile(&src) {
                                Ok(img) => {
                                    let v = differential_check(Arc::new(img), i as u64);
                                    (v.passed(), format!("program {i}: {v}"), src)
                                }
                                Err(e) => (false, format!("program {i}: FAIL compile: {e}"), src),
                            }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (ok, line, src) in &lines {
        println!("{line}");
        if !ok {
            failed += 1;
            if show {
                println!("{src}");
            }
        }
    }
    println!("fuzz: {} programs, {} passed, {} failed (seed {seed})", iters, iters - failed, failed);
    if failed == 0 {
        Ok(())
    } else {
        Err(Fail::Found(format!("{failed} failing program(s)")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let r = match &cli.cmd {
        Cmd::Compile { src, out } => cmd_compile(src, out),
        Cmd::Run { image, vm, snapshot, snapshot_at } => cmd_run(image, vm, snapshot.as_deref(), *snapshot_at),
        Cmd::Serve { image, listen, vm, steps, at_exit } => cmd_serve(image, listen, vm, *steps, *at_exit),
        Cmd::Trace { src, dot, json } => cmd_trace(src, dot.as_deref(), json.as_deref()),
        Cmd::Leakcheck { src, json } => cmd_leakcheck(src, json.as_deref()),
        Cmd::Swapdemo { image, cap, store, path, seed, max_steps, verbose } => {
            cmd_swapdemo(image, *cap, *store, path.as_deref(), *seed, *max_steps, *verbose)
        }
        Cmd::Fuzz { iters, seed, union_heavy, show_failures } => cmd_fuzz(*iters, *seed, *union_heavy, *show_failures),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Fail::Found(m) | Fail::Usage(m) | Fail::Internal(m)) = &f;
            eprintln!("maptrace: {m}");
            ExitCode::from(f.code())
        }
    }
}
