use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "priaas",
    version,
    about = "Consent broker client, service runner and demo driver"
)]
pub struct Cli {
    /// Operator base URL. Falls back to PRIAAS_OPERATOR, then the config file.
    #[arg(long, global = true)]
    pub operator: Option<String>,
    /// CLI config file (TOML: operator, credentials, output).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Account credentials file written by `account create` and `account import`.
    #[arg(long, global = true)]
    pub credentials: Option<PathBuf>,
    /// Log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the operator.
    #[command(subcommand)]
    Operator(OperatorCmd),
    /// Run or register data services.
    #[command(subcommand)]
    Service(ServiceCmd),
    /// Manage the account in the credentials file.
    #[command(subcommand)]
    Account(AccountCmd),
    /// Link the account to a registered service.
    Link {
        #[arg(long)]
        service: String,
    },
    /// List the account's service links.
    Links,
    /// Grant, change and inspect consents.
    #[command(subcommand)]
    Consent(ConsentCmd),
    /// Aggregator proxy operations against a running source.
    #[command(subcommand)]
    Proxy(ProxyCmd),
    /// End-to-end demos on loopback ports.
    #[command(subcommand)]
    Demo(DemoCmd),
    /// Compare message counts against the baseline protocol.
    FlowReport {
        /// Scenario JSON; the bundled demo scenario by default.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write both transcripts into this directory.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Print the exit-code table.
    #[command(long_about = exit_codes_help())]
    ExitCodes,
}

fn exit_codes_help() -> String {
    format!(
        "Exit codes used by every command:\n\n{}",
        crate::exit::table()
    )
}

#[derive(Debug, Subcommand)]
pub enum OperatorCmd {
    /// Serve the operator REST API until interrupted.
    Serve {
        /// Operator config (TOML). Environment overrides apply on top.
        #[arg(long)]
        operator_config: PathBuf,
        /// Seconds between background notice delivery retries.
        #[arg(long, default_value_t = 5)]
        retry_secs: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ServiceKind {
    Source,
    Reasoner,
    App,
}

#[derive(Debug, Subcommand)]
pub enum ServiceCmd {
    /// Register with the operator and serve until interrupted. The admin
    /// routes take the token in PRIAAS_ADMIN_TOKEN; without it they are closed.
    Serve {
        #[arg(long, value_enum)]
        kind: ServiceKind,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Name in the registry; the bundled name for the kind by default.
        #[arg(long)]
        name: Option<String>,
        /// Callback URL published in the registry; the listener URL by default.
        #[arg(long)]
        public_url: Option<String>,
        /// Service key file; created with a fresh key when missing.
        #[arg(long)]
        key_file: Option<PathBuf>,
    },
    /// Register a service described on the command line and print its secret once.
    Register {
        #[arg(long, value_enum)]
        kind: ServiceKind,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        name: Option<String>,
        /// Base64url ed25519 key; a fresh key is generated when absent.
        #[arg(long, conflicts_with = "key_out")]
        verification_key: Option<String>,
        /// Where to write the generated key file.
        #[arg(long)]
        key_out: Option<PathBuf>,
    },
    /// List the operator's registry.
    List,
    /// Ask a running reasoner to pull under a consent.
    Pull {
        #[arg(long)]
        reasoner: String,
        #[arg(long)]
        consent: String,
        /// Resource types to pull; every consented type by default.
        #[arg(long = "resource")]
        resources: Vec<String>,
        #[command(flatten)]
        window: Window,
    },
    /// Ask a running app to fetch from its source under a consent.
    Fetch {
        #[arg(long)]
        app: String,
        #[arg(long)]
        consent: String,
        #[arg(long, default_value = "recommendations")]
        resource: String,
        #[command(flatten)]
        window: Window,
    },
}

/// RFC 3339 time window; the consent's range, or the last week, by default.
#[derive(Debug, Args)]
pub struct Window {
    #[arg(long, requires = "to")]
    pub from: Option<String>,
    #[arg(long, requires = "from")]
    pub to: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AccountCmd {
    /// Create an account. The credential is read from PRIAAS_CREDENTIAL or stdin.
    Create {
        #[arg(long)]
        name: String,
    },
    /// Write the signed account document to a file.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Import a document at --operator. The new credential is read like `create`.
    Import {
        #[arg(long)]
        file: PathBuf,
    },
    /// Delete the account and print the erasure report.
    Delete,
    /// Check an exported document's signature.
    Verify {
        #[arg(long)]
        file: PathBuf,
        /// Exporting operator's key; fetched from --operator when it is the exporter.
        #[arg(long)]
        key: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConsentCmd {
    /// Let a sink use resources from a source, both named by service id.
    Grant(GrantArgs),
    Pause {
        consent: String,
    },
    Resume {
        consent: String,
    },
    Revoke {
        consent: String,
    },
    List,
    Receipt {
        consent: String,
    },
}

#[derive(Debug, Args)]
pub struct GrantArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub sink: String,
    #[arg(long = "resource", required = true)]
    pub resources: Vec<String>,
    #[arg(long = "purpose", required = true)]
    pub purposes: Vec<String>,
    /// RFC 3339 start of the consented time range.
    #[arg(long, requires = "to")]
    pub from: Option<String>,
    #[arg(long, requires = "from")]
    pub to: Option<String>,
    /// RFC 3339 expiry of the consent.
    #[arg(long)]
    pub expires_at: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ProxyCmd {
    /// Load vendor data into a source for a subject pseudonym. Needs
    /// PRIAAS_ADMIN_TOKEN.
    Sync {
        #[arg(long)]
        source: String,
        #[arg(long)]
        pseudonym: String,
        #[arg(long)]
        vendor_user: String,
        /// Vendor fixture files; the bundled fixtures by default.
        #[arg(long = "fixtures")]
        fixtures: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DemoCmd {
    /// Operator, source, reasoner and health app in one process.
    Fig5 {
        /// Take the operator down before the first step with this name.
        #[arg(long)]
        fail_operator_at: Option<String>,
    },
}
