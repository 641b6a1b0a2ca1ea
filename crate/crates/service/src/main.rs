use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use campus_coordinator::{Coordinator, Role, UserAction};
use campus_service::{router, run_scenario_file, Clock, ReportFlags, Scenario, Service, Site, SystemClock};
use campus_tag::SystemKey;
use clap::{Args, Parser, Subcommand};
use rand::RngCore;

#[derive(Parser)]
#[command(
    name = "campus",
    version,
    about = "Campus access control: coordinator service and tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StoreArgs {
    /// Encrypted store file
    #[arg(long)]
    store: PathBuf,
    #[arg(long, env = "CAMPUS_STORE_PASSPHRASE", hide_env_values = true)]
    passphrase: String,
}

#[derive(Subcommand)]
enum Command {
    /// Create a new store with one ADMIN account
    Init {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, default_value = "admin")]
        admin: String,
        #[arg(long, env = "CAMPUS_ADMIN_PASSWORD", hide_env_values = true)]
        admin_password: String,
    },
    /// Run the HTTP API
    Serve {
        #[command(flatten)]
        store: StoreArgs,
        /// Scenario file whose terminals and cards are simulated as live hardware
        #[arg(long)]
        site: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long, default_value_t = 1000)]
        poll_interval_ms: u64,
        /// Where POST /v1/backup writes; defaults to `backups` next to the store
        #[arg(long)]
        backup_dir: Option<PathBuf>,
    },
    /// Execute a scenario on a virtual clock and print its transcript
    Run {
        scenario: PathBuf,
        /// Write the transcript here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an event report
    Report {
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        flags: ReportFlags,
    },
    /// Account administration
    Admin {
        #[command(subcommand)]
        command: AdminCommand,
    },
    /// Write a timestamped copy of the store into a directory
    Backup {
        dir: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Subcommand)]
enum AdminCommand {
    User {
        #[command(subcommand)]
        command: UserCommand,
    },
}

#[derive(Args)]
struct ActorArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Acting ADMIN account
    #[arg(long = "as", default_value = "admin")]
    actor: String,
    /// Password of the acting account
    #[arg(long, env = "CAMPUS_PASSWORD", hide_env_values = true)]
    password: String,
}

#[derive(Subcommand)]
enum UserCommand {
    /// Add an account; its password comes from CAMPUS_USER_PASSWORD
    Add {
        username: String,
        #[arg(long, value_parser = parse_role, default_value = "VIEWER")]
        role: Role,
        #[arg(long, env = "CAMPUS_USER_PASSWORD", hide_env_values = true)]
        user_password: String,
        #[command(flatten)]
        ctx: ActorArgs,
    },
    Rm {
        username: String,
        #[command(flatten)]
        ctx: ActorArgs,
    },
    Role {
        username: String,
        #[arg(value_parser = parse_role)]
        role: Role,
        #[command(flatten)]
        ctx: ActorArgs,
    },
}

fn parse_role(s: &str) -> Result<Role, String> {
    Role::from_name(s).ok_or_else(|| format!("unknown role `{s}` (VIEWER, OPERATOR, ADMIN)"))
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Init {
            store,
            admin,
            admin_password,
        } => init(&store, &admin, &admin_password),
        Command::Serve {
            store,
            site,
            listen,
            poll_interval_ms,
            backup_dir,
        } => serve(&store, site.as_deref(), listen, poll_interval_ms, backup_dir),
        Command::Run { scenario, out } => {
            let outcome = run_scenario_file(&scenario)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, outcome.transcript).with_context(|| format!("writing {}", path.display()))?
                }
                None => std::io::stdout().write_all(outcome.transcript.as_bytes())?,
            }
            Ok(())
        }
        Command::Report { store, flags } => {
            let q = flags.to_query().map_err(anyhow::Error::msg)?;
            let coordinator = Coordinator::restore(&store.store, &store.passphrase)?;
            let out = coordinator.query_report(&q)?;
            std::io::stdout().write_all(&out)?;
            Ok(())
        }
        Command::Admin {
            command: AdminCommand::User { command },
        } => user_admin(command),
        Command::Backup { dir, store } => {
            let mut coordinator = Coordinator::restore(&store.store, &store.passphrase)?;
            std::fs::create_dir_all(&dir)?;
            let path = coordinator.snapshot_backup(&dir, &store.passphrase, SystemClock.now())?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn init(store: &StoreArgs, admin: &str, password: &str) -> Result<()> {
    if store.store.exists() {
        bail!("{} already exists", store.store.display());
    }
    let mut key = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut key);
    let mut coordinator = Coordinator::create(SystemKey::new(key), admin, password, SystemClock.now())?;
    coordinator.attach_store(&store.store, &store.passphrase)?;
    println!("created {}", store.store.display());
    Ok(())
}

fn user_admin(command: UserCommand) -> Result<()> {
    let (ctx, action) = match command {
        UserCommand::Add {
            username,
            role,
            user_password,
            ctx,
        } => (
            ctx,
            UserAction::Add {
                username,
                role,
                password: user_password,
            },
        ),
        UserCommand::Rm { username, ctx } => (ctx, UserAction::Remove { username }),
        UserCommand::Role { username, role, ctx } => (ctx, UserAction::SetRole { username, role }),
    };
    let mut coordinator = Coordinator::open_store(&ctx.store.store, &ctx.store.passphrase)?;
    coordinator.authenticate(&ctx.actor, &ctx.password)?;
    coordinator.manage_user(&ctx.actor, action, SystemClock.now())?;
    coordinator.save()?;
    Ok(())
}

fn serve(
    store: &StoreArgs,
    site_file: Option<&Path>,
    listen: SocketAddr,
    poll_interval_ms: u64,
    backup_dir: Option<PathBuf>,
) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let mut coordinator = Coordinator::open_store(&store.store, &store.passphrase)?;
    let scenario = match site_file {
        Some(path) => Scenario::from_file(path)?,
        None => Scenario::default(),
    };
    let actor = coordinator
        .state()
        .users
        .values()
        .find(|u| u.role == Role::Admin)
        .map(|u| u.username.clone())
        .context("store has no ADMIN account")?;
    let (site, registrations) = Site::build(&scenario, &mut coordinator, &actor, SystemClock.now())?;
    for r in registrations.iter().filter(|r| r.issued) {
        tracing::info!("issued card {} to {} ({})", r.uid, r.name, r.personal_id);
    }
    coordinator.save()?;
    let backup_dir =
        backup_dir.unwrap_or_else(|| store.store.parent().unwrap_or_else(|| Path::new(".")).join("backups"));
    let service =
        Arc::new(Service::new(coordinator, site, SystemClock).with_backups(backup_dir, store.passphrase.clone()));

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let poller = service.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_millis(poll_interval_ms.max(10)));
            loop {
                tick.tick().await;
                let svc = poller.clone();
                match tokio::task::spawn_blocking(move || svc.poll_all()).await {
                    Ok(s) => {
                        for (id, why) in s.failed {
                            tracing::warn!("poll {id}: {why}");
                        }
                    }
                    Err(e) => tracing::error!("poller: {e}"),
                }
            }
        });
        let listener = tokio::net::TcpListener::bind(listen).await?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}
