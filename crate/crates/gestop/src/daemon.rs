//! The long-running service: ingress → recognizer → executor, with the
//! control plane on its own runtime.

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use anyhow::{Context, Result};
use arc_swap::ArcSwap;
use gestop_core::datasets::{save_sequence, DatasetError};
use gestop_core::executor::{load_mapping, ActionSink, Executor};
use gestop_core::ingress::{Ingress, IngressStats};
use gestop_core::model::{GestureKind, KeypointFrame};
use gestop_core::nn::{load_model, DynamicModel, StaticModel};
use gestop_core::recognizer::{Models, Recognizer, Segment, Segmenter};
use tokio::sync::{broadcast, watch};

use crate::config::DaemonConfig;
use crate::events::{RecordingStatus, Status, WsEvent};

/// Capacity of the subscriber fan-out; slow subscribers lose the oldest
/// messages beyond this.
pub const EVENT_BUFFER: usize = 1024;
const POLL: Duration = Duration::from_millis(50);

pub(crate) struct Recording {
    pub kind: GestureKind,
    pub label: String,
    pub frames: Vec<KeypointFrame>,
    pub segmenter: Segmenter,
    pub sequences: usize,
}

impl Recording {
    pub fn new(kind: GestureKind, label: String, min_segment_frames: usize) -> Self {
        Self {
            kind,
            label,
            frames: Vec::new(),
            segmenter: Segmenter::new(min_segment_frames),
            sequences: 0,
        }
    }

    pub fn count(&self) -> usize {
        match self.kind {
            GestureKind::Static => self.frames.len(),
            GestureKind::Dynamic => self.sequences,
        }
    }

    pub fn status(&self) -> RecordingStatus {
        RecordingStatus {
            kind: self.kind.to_string(),
            label: self.label.clone(),
            count: self.count(),
        }
    }
}

/// State shared by the frame pipeline and the control plane.
pub struct Shared {
    pub config: DaemonConfig,
    pub models: ArcSwap<Models>,
    pub executor: Executor,
    pub(crate) events: broadcast::Sender<Arc<str>>,
    pub(crate) shutdown: watch::Sender<bool>,
    pub signal_on: AtomicBool,
    pub(crate) recording: Mutex<Option<Recording>>,
    pub(crate) retraining: Mutex<Option<String>>,
    pub frames_processed: AtomicU64,
    pub dropped_events: AtomicU64,
    pub ingress_stats: Arc<IngressStats>,
}

impl Shared {
    /// Sends to current subscribers; never blocks.
    pub fn publish(&self, event: &WsEvent) {
        if self.events.receiver_count() > 0 {
            let _ = self.events.send(Arc::from(event.to_json()));
        }
    }

    pub fn status(&self) -> Status {
        Status {
            frames_processed: self.frames_processed.load(Ordering::Relaxed),
            malformed_records: self.ingress_stats.malformed(),
            dropped_events: self.dropped_events.load(Ordering::Relaxed),
            signal_on: self.signal_on.load(Ordering::Relaxed),
            recording: self
                .recording
                .lock()
                .expect("recording lock")
                .as_ref()
                .map(Recording::status),
            retraining: self.retraining.lock().expect("retrain lock").clone(),
            message: None,
        }
    }

    pub fn publish_status(&self, message: Option<String>) {
        self.publish(&WsEvent::Status(Status {
            message,
            ..self.status()
        }));
    }

    fn record_frame(&self, frame: &KeypointFrame) {
        let mut guard = self.recording.lock().expect("recording lock");
        let Some(rec) = guard.as_mut() else { return };
        match rec.kind {
            GestureKind::Static => rec.frames.push(*frame),
            GestureKind::Dynamic => {
                if let Some(seg) = rec.segmenter.push(frame) {
                    self.store_segment(rec, seg);
                }
            }
        }
    }

    pub(crate) fn store_segment(&self, rec: &mut Recording, seg: Segment) {
        match seg {
            Segment::Complete(frames) => {
                match save_sequence(self.config.dynamic_data(), &rec.label, &frames) {
                    Ok(path) => {
                        rec.sequences += 1;
                        log::info!("recorded '{}' sequence {}", rec.label, path.display());
                    }
                    Err(e) => log::error!("cannot save recorded sequence: {e}"),
                }
            }
            Segment::Discarded(n) => log::warn!("recording: skipped {n}-frame run (too short)"),
        }
    }

    /// Ends the current recording, writing buffered static rows.
    pub(crate) fn stop_recording(&self) -> Option<Result<RecordingStatus, DatasetError>> {
        let mut rec = self.recording.lock().expect("recording lock").take()?;
        if rec.kind == GestureKind::Dynamic {
            if let Some(seg) = rec.segmenter.finish() {
                self.store_segment(&mut rec, seg);
            }
        } else if !rec.frames.is_empty() {
            let n = rec.frames.len();
            let frames = std::mem::take(&mut rec.frames);
            if let Err(e) = gestop_core::datasets::record_static(
                self.config.static_data(),
                &rec.label,
                frames,
                n,
            ) {
                return Some(Err(e));
            }
            return Some(Ok(RecordingStatus {
                kind: rec.kind.to_string(),
                label: rec.label,
                count: n,
            }));
        }
        Some(Ok(rec.status()))
    }
}

pub fn load_models(config: &DaemonConfig) -> Result<Models> {
    let static_model: StaticModel = load_model(&config.static_model)
        .with_context(|| format!("loading static model {}", config.static_model.display()))?;
    let dynamic_model: DynamicModel = load_model(&config.dynamic_model)
        .with_context(|| format!("loading dynamic model {}", config.dynamic_model.display()))?;
    Ok(Models::new(static_model, dynamic_model, config.none_scale)?)
}

/// A running daemon. Dropping it shuts everything down.
pub struct DaemonHandle {
    shared: Arc<Shared>,
    ingress: Option<Ingress>,
    stop: Arc<AtomicBool>,
    pipeline: Option<JoinHandle<()>>,
    server: Option<tokio::task::JoinHandle<()>>,
    runtime: Option<tokio::runtime::Runtime>,
    ingress_addr: SocketAddr,
    control_addr: SocketAddr,
}

impl DaemonHandle {
    /// Loads models and mapping, binds both ports, and starts serving.
    pub fn start(config: DaemonConfig, sink: Arc<dyn ActionSink>) -> Result<Self> {
        config.validate()?;
        let models = load_models(&config)?;
        let mapping = load_mapping(&config.mapping)
            .with_context(|| format!("loading mapping {}", config.mapping.display()))?;
        let mut executor = Executor::new(mapping, sink);
        if let Some(path) = &config.dispatch_log {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening dispatch log {}", path.display()))?;
            executor = executor.with_log(Box::new(BufWriter::new(file)));
        }
        let recognizer = Recognizer::new(config.recognizer)?;

        let (ingress, frames) = Ingress::bind(config.ingress_addr)
            .with_context(|| format!("binding ingress on {}", config.ingress_addr))?;
        let ingress_addr = ingress.local_addr();

        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("gestop-control")
            .enable_all()
            .build()?;
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind(config.control_addr))
            .with_context(|| format!("binding control plane on {}", config.control_addr))?;
        let control_addr = listener.local_addr()?;

        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let (shutdown, _) = watch::channel(false);
        let shared = Arc::new(Shared {
            config,
            models: ArcSwap::from_pointee(models),
            executor,
            events,
            shutdown,
            signal_on: AtomicBool::new(false),
            recording: Mutex::new(None),
            retraining: Mutex::new(None),
            frames_processed: AtomicU64::new(0),
            dropped_events: AtomicU64::new(0),
            ingress_stats: ingress.stats(),
        });

        let stop = Arc::new(AtomicBool::new(false));
        let pipeline = {
            let shared = shared.clone();
            let stop = stop.clone();
            thread::Builder::new()
                .name("gestop-pipeline".into())
                .spawn(move || run_pipeline(&shared, recognizer, frames, &stop))?
        };
        let server = runtime.spawn(crate::control::serve(listener, shared.clone()));
        log::info!("ingress on {ingress_addr}, control plane on http://{control_addr}");

        Ok(Self {
            shared,
            ingress: Some(ingress),
            stop,
            pipeline: Some(pipeline),
            server: Some(server),
            runtime: Some(runtime),
            ingress_addr,
            control_addr,
        })
    }

    pub fn ingress_addr(&self) -> SocketAddr {
        self.ingress_addr
    }

    pub fn control_addr(&self) -> SocketAddr {
        self.control_addr
    }

    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Blocks until Ctrl-C or SIGTERM.
    pub fn wait_for_signal(&self) {
        let Some(rt) = &self.runtime else { return };
        rt.block_on(async {
            #[cfg(unix)]
            {
                use tokio::signal::unix::{signal, SignalKind};
                match signal(SignalKind::terminate()) {
                    Ok(mut term) => {
                        tokio::select! {
                            _ = tokio::signal::ctrl_c() => {}
                            _ = term.recv() => {}
                        }
                    }
                    Err(e) => {
                        log::warn!("cannot listen for SIGTERM: {e}");
                        let _ = tokio::signal::ctrl_c().await;
                    }
                }
            }
            #[cfg(not(unix))]
            {
                let _ = tokio::signal::ctrl_c().await;
            }
        });
        log::info!("shutdown requested");
    }

    /// Stops ingress, drains queued frames through the pipeline, flushes the
    /// dispatch log, and closes the control plane.
    pub fn shutdown(mut self) -> Result<()> {
        self.shutdown_inner()
    }

    fn shutdown_inner(&mut self) -> Result<()> {
        if let Some(mut ingress) = self.ingress.take() {
            ingress.shutdown();
        }
        self.stop.store(true, Ordering::SeqCst);
        if let Some(p) = self.pipeline.take() {
            if p.join().is_err() {
                log::error!("frame pipeline panicked");
            }
        }
        if let Some(Ok(status)) = self.shared.stop_recording() {
            log::info!(
                "recording '{}' closed with {} sample(s)",
                status.label,
                status.count
            );
        }
        let _ = self.shared.shutdown.send(true);
        if let Some(rt) = self.runtime.take() {
            if let Some(server) = self.server.take() {
                let _ = rt
                    .block_on(async { tokio::time::timeout(Duration::from_secs(2), server).await });
            }
            rt.shutdown_timeout(Duration::from_secs(1));
        }
        self.shared
            .executor
            .flush()
            .context("flushing dispatch log")?;
        Ok(())
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        if self.runtime.is_some() {
            if let Err(e) = self.shutdown_inner() {
                log::error!("shutdown: {e:#}");
            }
        }
    }
}

fn run_pipeline(
    shared: &Shared,
    mut recognizer: Recognizer,
    frames: Receiver<KeypointFrame>,
    stop: &AtomicBool,
) {
    let mut models = shared.models.load_full();
    let mut last_ts = 0;
    loop {
        match frames.recv_timeout(POLL) {
            Ok(frame) => {
                last_ts = frame.timestamp_ms;
                let current = shared.models.load_full();
                if !Arc::ptr_eq(&current, &models) {
                    recognizer.reset_streak();
                    models = current;
                }
                process(shared, &mut recognizer, &models, frame);
            }
            Err(RecvTimeoutError::Timeout) if stop.load(Ordering::SeqCst) => break,
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    // Ingress has stopped; whatever is still queued gets processed.
    while let Ok(frame) = frames.try_recv() {
        last_ts = frame.timestamp_ms;
        process(shared, &mut recognizer, &models, frame);
    }
    match recognizer.finish(last_ts, &models) {
        Ok(Some(event)) => {
            shared.executor.execute(&event);
            shared.publish(&WsEvent::from_event(&event));
        }
        Ok(None) => {}
        Err(e) => log::warn!("closing open segment: {e}"),
    }
    if let Err(e) = shared.executor.flush() {
        log::error!("flushing dispatch log: {e}");
    }
}

fn process(shared: &Shared, recognizer: &mut Recognizer, models: &Models, frame: KeypointFrame) {
    let frame = if shared.signal_on.load(Ordering::Relaxed) {
        frame.with_signal(true)
    } else {
        frame
    };
    shared.publish(&WsEvent::frame(&frame));
    shared.record_frame(&frame);
    match recognizer.process_frame(&frame, models) {
        Ok(events) => {
            for event in &events {
                shared.executor.execute(event);
                shared.publish(&WsEvent::from_event(event));
            }
        }
        Err(e) => log::warn!("frame t={}: {e}", frame.timestamp_ms),
    }
    shared.frames_processed.fetch_add(1, Ordering::Relaxed);
}
