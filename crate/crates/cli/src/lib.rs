//! Command implementations behind the `walkscope` binary.
//!
//! Every flag can also be set through an environment variable named
//! `WALKSCOPE_<FLAG>` (upper case, dashes as underscores).

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use walkscope_core::converge::{self, ConvergeError, CoverageMode, SyntheticScenario};
use walkscope_core::geom::{build_grid, GeomError};
use walkscope_core::ingest::{
    load_amenities, load_wards, AmenityFields, CategoryTaxonomy, IngestError,
};
use walkscope_core::isochrone::{
    buffer_provider, compute_catchments, read_catchments, write_catchments, CatchmentError,
    CatchmentSpec, IsochroneProvider, ProviderError, RoutingClient, RoutingConfig,
};
use walkscope_core::precompute::{
    build_k_vectors, load_store, save_store, KVectorStore, LoadOptions, PrecomputeError,
};
use walkscope_core::scoring::{
    round6, Granularity, ScoreError, ScoreSurface, ScoringPlan, UserConfig,
};
use walkscope_service::{router, AppState, ServiceConfig};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PROVIDER: u8 = 4;
pub const EXIT_INTERNAL: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "walkscope",
    version,
    about = "Personalized walking-accessibility scores on a metric grid"
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true, env = "WALKSCOPE_JOBS")]
    pub jobs: Option<usize>,
    /// Log verbosity written to stderr (default: info for serve, warn otherwise).
    #[arg(long, global = true, env = "WALKSCOPE_LOG_LEVEL")]
    pub log_level: Option<tracing::Level>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a k-vector store from wards and amenities (or cached catchments).
    Precompute(Box<PrecomputeArgs>),
    /// Score a store under a config and write GeoJSON or CSV.
    Score(ScoreArgs),
    /// Serve the HTTP API over a store.
    Serve(ServeArgs),
    /// Run a grid-versus-continuous convergence study.
    Converge(ConvergeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Circular walking buffer around each origin.
    Buffer,
    /// HTTP routing engine isochrones.
    Routing,
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    /// Ward boundaries (GeoJSON FeatureCollection).
    #[arg(long, env = "WALKSCOPE_WARDS")]
    pub wards: PathBuf,
    /// Ward id property name.
    #[arg(long, env = "WALKSCOPE_WARD_ID_PROPERTY", default_value = "ward_id")]
    pub ward_id_property: String,
    /// Amenity features (GeoJSON FeatureCollection).
    #[arg(
        long,
        env = "WALKSCOPE_AMENITIES",
        required_unless_present = "catchments",
        conflicts_with = "catchments"
    )]
    pub amenities: Option<PathBuf>,
    /// Directory of previously exported catchments, one GeoJSON per category.
    #[arg(long, env = "WALKSCOPE_CATCHMENTS")]
    pub catchments: Option<PathBuf>,
    /// Write computed catchments to this directory.
    #[arg(long, env = "WALKSCOPE_EXPORT_CATCHMENTS")]
    pub export_catchments: Option<PathBuf>,
    #[arg(long, env = "WALKSCOPE_PROVIDER", value_enum, default_value = "buffer")]
    pub provider: ProviderKind,
    /// Routing isochrone URL (provider = routing).
    #[arg(long, env = "WALKSCOPE_ROUTING_ENDPOINT")]
    pub routing_endpoint: Option<String>,
    /// Full routing client config as JSON (provider = routing).
    #[arg(long, env = "WALKSCOPE_ROUTING_CONFIG")]
    pub routing_config: Option<PathBuf>,
    /// Walking speed for the buffer provider, metres per minute.
    #[arg(long, env = "WALKSCOPE_WALK_SPEED", default_value_t = 80.0)]
    pub walk_speed: f64,
    #[arg(long, env = "WALKSCOPE_MAX_MINUTES", default_value_t = 15.0)]
    pub max_minutes: f64,
    /// Grid cell side in metres.
    #[arg(long, env = "WALKSCOPE_CELL_SIZE", default_value_t = 250.0)]
    pub cell_size: f64,
    /// Category taxonomy JSON (default: built-in 45 categories).
    #[arg(long, env = "WALKSCOPE_TAXONOMY")]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, env = "WALKSCOPE_AMENITY_ID_PROPERTY", default_value = "id")]
    pub amenity_id_property: String,
    #[arg(long, env = "WALKSCOPE_CATEGORY_PROPERTY", default_value = "category")]
    pub category_property: String,
    /// Output store path.
    #[arg(long, env = "WALKSCOPE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Geojson,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GranularityArg {
    Grid,
    Ward,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Grid => Granularity::Grid,
            GranularityArg::Ward => Granularity::Ward,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, env = "WALKSCOPE_STORE")]
    pub store: PathBuf,
    /// User config JSON.
    #[arg(long, env = "WALKSCOPE_CONFIG")]
    pub config: PathBuf,
    #[arg(
        long,
        env = "WALKSCOPE_GRANULARITY",
        value_enum,
        default_value = "ward"
    )]
    pub granularity: GranularityArg,
    #[arg(long, env = "WALKSCOPE_FORMAT", value_enum, default_value = "geojson")]
    pub format: OutputFormat,
    #[arg(long, env = "WALKSCOPE_OUT")]
    pub out: PathBuf,
    /// Load the store even if its taxonomy hash does not verify.
    #[arg(long, env = "WALKSCOPE_FORCE")]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "WALKSCOPE_STORE")]
    pub store: PathBuf,
    #[arg(long, env = "WALKSCOPE_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Allowed CORS origins, comma separated; `*` for any.
    #[arg(long, env = "WALKSCOPE_CORS", value_delimiter = ',')]
    pub cors: Vec<String>,
    /// Surface memo capacity; 0 disables it.
    #[arg(long, env = "WALKSCOPE_CACHE_SIZE", default_value_t = walkscope_service::DEFAULT_CACHE_SIZE)]
    pub cache_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    HalfArea,
    Centroid,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    /// Synthetic scenario JSON.
    #[arg(long, env = "WALKSCOPE_SCENARIO")]
    pub scenario: PathBuf,
    /// Cell sizes in metres, strictly decreasing, comma separated.
    #[arg(long, env = "WALKSCOPE_RESOLUTIONS", value_delimiter = ',')]
    pub resolutions: Vec<f64>,
    #[arg(long, env = "WALKSCOPE_MODE", value_enum, default_value = "half-area")]
    pub mode: ModeArg,
    #[arg(long, env = "WALKSCOPE_OUT")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: m.into(),
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn internal(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: m.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = if matches!(e, IngestError::Io { .. }) {
            EXIT_IO
        } else {
            EXIT_VALIDATION
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        Self {
            code: EXIT_PROVIDER,
            message: e.to_string(),
        }
    }
}

impl From<CatchmentError> for CliError {
    fn from(e: CatchmentError) -> Self {
        let code = match e {
            CatchmentError::Provider { .. } | CatchmentError::Contract { .. } => EXIT_PROVIDER,
            _ => EXIT_VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<PrecomputeError> for CliError {
    fn from(e: PrecomputeError) -> Self {
        let code = if matches!(e, PrecomputeError::Io { .. }) {
            EXIT_IO
        } else {
            EXIT_VALIDATION
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        let code = match e {
            ScoreError::Io { .. } => EXIT_IO,
            ScoreError::InvalidParameter(_) => EXIT_INTERNAL,
            _ => EXIT_VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConvergeError> for CliError {
    fn from(e: ConvergeError) -> Self {
        match e {
            ConvergeError::Io { .. } => Self {
                code: EXIT_IO,
                message: e.to_string(),
            },
            ConvergeError::Score(s) => s.into(),
            ConvergeError::Precompute(p) => p.into(),
            other => Self::validation(other.to_string()),
        }
    }
}

/// Runs a parsed command line. Output destined for the terminal is returned
/// as text rather than printed, except for `serve`, which runs until Ctrl-C.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let threads = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::validation("--jobs must be at least 1"));
    }
    let default_level = if matches!(cli.command, Command::Serve(_)) {
        tracing::Level::INFO
    } else {
        tracing::Level::WARN
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(cli.log_level.unwrap_or(default_level))
        .try_init();
    if let Command::Serve(args) = cli.command {
        return serve(&args, threads).map(|_| String::new());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Precompute(a) => precompute(a, threads).map(|s| s.render()),
        Command::Score(a) => score(a),
        Command::Converge(a) => converge_cmd(a),
        Command::Serve(_) => unreachable!(),
    })
}

pub struct PrecomputeSummary {
    pub store: KVectorStore,
    pub catchments: usize,
    pub empty_catchments: Vec<String>,
    pub dropped_amenities: usize,
}

impl PrecomputeSummary {
    pub fn render(&self) -> String {
        let s = &self.store;
        let g = s.grid();
        let assigned = (0..s.n_cells())
            .filter(|&c| s.ward_index(c).is_some())
            .count();
        let mut out = String::new();
        writeln!(
            out,
            "cells: {} ({} x {}, {} m), {} assigned to {} wards",
            s.n_cells(),
            g.n_cols,
            g.n_rows,
            g.cell_size,
            assigned,
            s.wards().len()
        )
        .ok();
        writeln!(
            out,
            "catchments: {} ({} empty, {} amenities dropped)",
            self.catchments,
            self.empty_catchments.len(),
            self.dropped_amenities
        )
        .ok();
        writeln!(out, "taxonomy: {}", s.taxonomy_hash()).ok();
        writeln!(
            out,
            "coverage histogram (cells with k = 0 | 1 | 2 | 3-4 | 5-9 | 10+):"
        )
        .ok();
        for (cat, bins) in s.coverage_histogram() {
            if bins[0] < s.n_cells() {
                let cols: Vec<String> = bins.iter().map(|b| b.to_string()).collect();
                writeln!(out, "  {cat:<20} {}", cols.join(" | ")).ok();
            }
        }
        out
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn precompute(a: &PrecomputeArgs, jobs: usize) -> Result<PrecomputeSummary, CliError> {
    if !(a.cell_size.is_finite() && a.cell_size > 0.0) {
        return Err(CliError::validation(format!(
            "--cell-size must be positive (got {})",
            a.cell_size
        )));
    }
    if !(a.max_minutes.is_finite() && a.max_minutes > 0.0) {
        return Err(CliError::validation(format!(
            "--max-minutes must be positive (got {})",
            a.max_minutes
        )));
    }
    let taxonomy = match &a.taxonomy {
        Some(p) => CategoryTaxonomy::from_path(p)?,
        None => CategoryTaxonomy::builtin(),
    };
    let wards = load_wards(&read(&a.wards)?, &a.ward_id_property)?;
    let projection = wards.projection;

    let (catchments, empty, dropped) = match (&a.amenities, &a.catchments) {
        (Some(path), _) => {
            let fields = AmenityFields {
                id_property: a.amenity_id_property.clone(),
                category_property: a.category_property.clone(),
            };
            let set = load_amenities(&read(path)?, &taxonomy, &fields)?;
            let provider: Box<dyn IsochroneProvider> = match a.provider {
                ProviderKind::Buffer => Box::new(buffer_provider(a.walk_speed)?),
                ProviderKind::Routing => {
                    let config = match (&a.routing_config, &a.routing_endpoint) {
                        (Some(p), _) => serde_json::from_slice::<RoutingConfig>(&read(p)?)
                            .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?,
                        (None, Some(url)) => RoutingConfig::new(url.clone()),
                        (None, None) => {
                            return Err(CliError::validation(
                                "routing provider needs --routing-endpoint or --routing-config",
                            ))
                        }
                    };
                    Box::new(RoutingClient::new(config, projection)?)
                }
            };
            let spec = CatchmentSpec {
                max_minutes: a.max_minutes,
                ..CatchmentSpec::default()
            };
            let run =
                compute_catchments(&set.features, &spec, provider.as_ref(), &projection, jobs)?;
            (run.catchments, run.empty, set.dropped())
        }
        (None, Some(dir)) => (read_catchments(dir, &taxonomy, &projection)?, Vec::new(), 0),
        (None, None) => {
            return Err(CliError::validation(
                "either --amenities or --catchments is required",
            ))
        }
    };
    if let Some(dir) = &a.export_catchments {
        write_catchments(dir, &catchments, &projection)?;
    }
    let grid = build_grid(projection, &wards.wards, a.cell_size)?;
    let store = build_k_vectors(&grid, &catchments, &taxonomy)?;
    save_store(&store, &a.out)?;
    Ok(PrecomputeSummary {
        store,
        catchments: catchments.len(),
        empty_catchments: empty,
        dropped_amenities: dropped,
    })
}

/// Renders a surface in the requested format. Output bytes depend only on
/// the store and the config.
pub fn render_surface(
    store: &KVectorStore,
    surface: &ScoreSurface,
    format: OutputFormat,
) -> String {
    match format {
        OutputFormat::Csv => {
            let mut out = String::from("id,score\n");
            for (id, v) in surface.iter() {
                writeln!(out, "{id},{:.6}", round6(v)).expect("string write");
            }
            out
        }
        OutputFormat::Geojson => {
            let features: Vec<Value> = match surface.granularity {
                Granularity::Grid => surface
                    .iter()
                    .map(|(id, v)| {
                        let cell: usize = id.parse().expect("cell id");
                        json!({
                            "type": "Feature",
                            "id": id,
                            "properties": { "id": id, "score": round6(v), "ward_id": store.ward_of(cell) },
                            "geometry": { "type": "Polygon", "coordinates": [store.cell_ring_lonlat(cell)] },
                        })
                    })
                    .collect(),
                Granularity::Ward => surface
                    .iter()
                    .map(|(id, v)| {
                        let w = store.wards().iter().position(|w| w.id.0 == id).expect("ward id");
                        json!({
                            "type": "Feature",
                            "id": id,
                            "properties": { "id": id, "score": round6(v) },
                            "geometry": { "type": "Polygon", "coordinates": store.ward_rings_lonlat(w) },
                        })
                    })
                    .collect(),
            };
            let mut s = serde_json::to_string(&json!({
                "type": "FeatureCollection",
                "properties": { "fingerprint": surface.fingerprint },
                "features": features,
            }))
            .expect("json");
            s.push('\n');
            s
        }
    }
}

pub fn score(a: &ScoreArgs) -> Result<String, CliError> {
    let config = UserConfig::from_path(&a.config)?;
    let store = load_store(
        &a.store,
        &LoadOptions {
            expected_taxonomy_hash: None,
            force: a.force,
        },
    )?;
    let plan = ScoringPlan::compile(&config, store.taxonomy())?;
    let surface = match a.granularity {
        GranularityArg::Grid => plan.grid_surface(&store)?,
        GranularityArg::Ward => plan.ward_surface(&store)?,
    };
    let text = render_surface(&store, &surface, a.format);
    std::fs::write(&a.out, text).map_err(|e| CliError::io(&a.out, e))?;
    Ok(format!(
        "wrote {} {} scores to {} (config {})\n",
        surface.len(),
        granularity_name(a.granularity),
        a.out.display(),
        &surface.fingerprint[..12]
    ))
}

fn granularity_name(g: GranularityArg) -> &'static str {
    match g {
        GranularityArg::Grid => "cell",
        GranularityArg::Ward => "ward",
    }
}

pub fn converge_cmd(a: &ConvergeArgs) -> Result<String, CliError> {
    if a.resolutions.is_empty() {
        return Err(CliError::validation(
            "--resolutions needs at least one cell size",
        ));
    }
    let scenario = SyntheticScenario::from_path(&a.scenario)?;
    let mode = match a.mode {
        ModeArg::HalfArea => CoverageMode::HalfArea,
        ModeArg::Centroid => CoverageMode::Centroid,
    };
    let rows = converge::run_refinement_with(&scenario, &a.resolutions, mode)?;
    let csv = converge::rows_to_csv(&rows);
    std::fs::write(&a.out, &csv).map_err(|e| CliError::io(&a.out, e))?;
    Ok(csv)
}

fn serve(a: &ServeArgs, threads: usize) -> Result<(), CliError> {
    let store = load_store(&a.store, &LoadOptions::default())?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(threads)
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| CliError {
                code: EXIT_IO,
                message: format!("cannot bind {}: {e}", a.bind),
            })?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::internal(e.to_string()))?;
        let state = AppState::new(Some(store), a.cache_size);
        let app = router(
            state,
            &ServiceConfig {
                cors_origins: a.cors.clone(),
                cache_size: a.cache_size,
            },
        );
        eprintln!("listening on http://{addr}");
        walkscope_service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError {
            code: EXIT_IO,
            message: e.to_string(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use walkscope_core::geom::{GridSpec, LatLon, PlanarPoint, Polygon, Projection, Ward};
    use walkscope_core::precompute::PrecomputeError;

    fn store() -> KVectorStore {
        let taxonomy = CategoryTaxonomy::builtin();
        let spec = GridSpec {
            origin: PlanarPoint::new(0.0, 0.0),
            cell_size: 100.0,
            n_cols: 2,
            n_rows: 1,
        };
        let mut counts = vec![vec![0u16; 2]; taxonomy.len()];
        counts[taxonomy.index_of("parks").unwrap()] = vec![1, 3];
        let wards = vec![Ward::new("A", Polygon::rect(0.0, 0.0, 200.0, 100.0))];
        KVectorStore::from_columns(
            Projection::new(LatLon { lat: 0.0, lon: 0.0 }),
            spec,
            taxonomy,
            wards,
            vec![0, 0],
            counts,
        )
        .unwrap()
    }

    #[test]
    fn csv_has_six_decimals_in_id_order() {
        let store = store();
        let config = UserConfig::from_json(
            r#"{"entries":[{"members":["parks"],"tier":"standard","decay":"balanced"}]}"#,
        )
        .unwrap();
        let plan = ScoringPlan::compile(&config, store.taxonomy()).unwrap();
        let csv = render_surface(
            &store,
            &plan.grid_surface(&store).unwrap(),
            OutputFormat::Csv,
        );
        assert_eq!(csv, "id,score\n0,0.500000\n1,0.875000\n");
        let csv = render_surface(
            &store,
            &plan.ward_surface(&store).unwrap(),
            OutputFormat::Csv,
        );
        assert_eq!(csv, "id,score\nA,0.687500\n");
    }

    #[test]
    fn error_codes() {
        assert_eq!(
            CliError::from(PrecomputeError::Io {
                path: "x".into(),
                message: "gone".into()
            })
            .code,
            EXIT_IO
        );
        assert_eq!(
            CliError::from(PrecomputeError::Version {
                found: 9,
                supported: 1
            })
            .code,
            EXIT_VALIDATION
        );
        assert_eq!(
            CliError::from(ScoreError::InvalidConfig(vec![])).code,
            EXIT_VALIDATION
        );
        assert_eq!(
            CliError::from(ProviderError::Other("down".into())).code,
            EXIT_PROVIDER
        );
        assert_eq!(
            CliError::from(GeomError::InvalidCellSize(0.0)).code,
            EXIT_VALIDATION
        );
    }

    #[test]
    fn resolutions_parse_comma_separated() {
        let cli = Cli::try_parse_from([
            "walkscope",
            "converge",
            "--scenario",
            "s.json",
            "--resolutions",
            "500,62.5",
            "--out",
            "o.csv",
        ])
        .unwrap();
        let Command::Converge(a) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(a.resolutions, vec![500.0, 62.5]);
        assert_eq!(a.mode, ModeArg::HalfArea);
    }

    #[test]
    fn amenities_and_catchments_are_exclusive() {
        let args = [
            "walkscope",
            "precompute",
            "--wards",
            "w",
            "--amenities",
            "a",
            "--catchments",
            "c",
            "--out",
            "o",
        ];
        assert!(Cli::try_parse_from(args).is_err());
        assert!(
            Cli::try_parse_from(["walkscope", "precompute", "--wards", "w", "--out", "o"]).is_err()
        );
    }
}
