//! Persistent decoder workers. A worker's key never leaves its thread; on
//! release the worker generates a fresh key and is re-certified before it
//! becomes available again, so no two jobs see the same decoder key.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use vron_core::attest::{StageCertificate, TrustRoots};
use vron_core::crypto::Role;
use vron_core::stages::decoder_measurement;

use crate::transport::{Sink, Source};
use crate::workers::{decoder_worker, new_identity, KeySource, SharedCertifier, WorkerError};

pub const DEFAULT_POOL_SIZE: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("could not start a decoder worker: {0}")]
    SpawnFailed(String),
    #[error("decoder worker {0} is gone")]
    WorkerGone(u64),
}

enum Command {
    Run {
        input: Source,
        frames: Sink,
        sidecar: Sink,
        done: Sender<Result<(), WorkerError>>,
    },
    Rotate {
        done: Sender<Result<StageCertificate, WorkerError>>,
    },
}

/// Handle to one decoder thread.
pub struct DecoderWorker {
    id: u64,
    certificate: StageCertificate,
    commands: Option<Sender<Command>>,
    thread: Option<JoinHandle<()>>,
}

impl DecoderWorker {
    fn spawn(id: u64, certifier: SharedCertifier, trust: TrustRoots, keys: KeySource) -> Result<Self, PoolError> {
        let (tx, rx) = channel::<Command>();
        let (ready_tx, ready_rx) = channel();
        let thread = thread::Builder::new()
            .name(format!("decoder-{id}"))
            .spawn(move || worker_loop(id, certifier, trust, keys, rx, ready_tx))
            .map_err(|e| PoolError::SpawnFailed(e.to_string()))?;
        let certificate = match ready_rx.recv() {
            Ok(Ok(c)) => c,
            Ok(Err(e)) => return Err(PoolError::SpawnFailed(format!("{e}"))),
            Err(_) => return Err(PoolError::SpawnFailed("worker exited during setup".into())),
        };
        Ok(Self {
            id,
            certificate,
            commands: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Certificate for the worker's current key.
    pub fn certificate(&self) -> &StageCertificate {
        &self.certificate
    }

    /// Starts decoding one segment; the result arrives on the receiver.
    pub fn run(&self, input: Source, frames: Sink, sidecar: Sink) -> Result<Receiver<Result<(), WorkerError>>, PoolError> {
        let (done, rx) = channel();
        self.send(Command::Run {
            input,
            frames,
            sidecar,
            done,
        })?;
        Ok(rx)
    }

    fn rotate(&mut self) -> Result<(), PoolError> {
        let (done, rx) = channel();
        self.send(Command::Rotate { done })?;
        match rx.recv() {
            Ok(Ok(c)) => {
                self.certificate = c;
                Ok(())
            }
            Ok(Err(e)) => Err(PoolError::SpawnFailed(format!("re-certification failed: {e}"))),
            Err(_) => Err(PoolError::WorkerGone(self.id)),
        }
    }

    fn send(&self, c: Command) -> Result<(), PoolError> {
        self.commands
            .as_ref()
            .and_then(|tx| tx.send(c).ok())
            .ok_or(PoolError::WorkerGone(self.id))
    }
}

impl Drop for DecoderWorker {
    fn drop(&mut self) {
        self.commands = None;
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn worker_loop(
    id: u64,
    certifier: SharedCertifier,
    trust: TrustRoots,
    keys: KeySource,
    commands: Receiver<Command>,
    ready: Sender<Result<StageCertificate, WorkerError>>,
) {
    let mut generation = 0u64;
    let fresh = |generation: u64| {
        new_identity(
            certifier.as_ref(),
            keys,
            &format!("decoder/{id}/{generation}"),
            decoder_measurement(),
            Role::Decoder,
        )
    };
    let mut identity = match fresh(generation) {
        Ok(i) => i,
        Err(e) => {
            let _ = ready.send(Err(e.into()));
            return;
        }
    };
    let _ = ready.send(Ok(identity.certificate.clone()));
    for c in commands {
        match c {
            Command::Run {
                input,
                frames,
                sidecar,
                done,
            } => {
                let r = decoder_worker(&identity, &trust, input, frames, sidecar);
                let _ = done.send(r);
            }
            Command::Rotate { done } => {
                generation += 1;
                match fresh(generation) {
                    Ok(i) => {
                        identity = i;
                        let _ = done.send(Ok(identity.certificate.clone()));
                    }
                    Err(e) => {
                        let _ = done.send(Err(e.into()));
                    }
                }
            }
        }
    }
}

/// Decoder workers waiting for jobs.
pub struct DecoderPool {
    idle: Mutex<Vec<DecoderWorker>>,
    capacity: usize,
    certifier: SharedCertifier,
    trust: TrustRoots,
    keys: KeySource,
    next_id: AtomicU64,
    spawn_latencies: Mutex<Vec<Duration>>,
}

impl DecoderPool {
    pub fn new(capacity: usize, certifier: SharedCertifier, trust: TrustRoots, keys: KeySource) -> Self {
        Self {
            idle: Mutex::new(Vec::new()),
            capacity,
            certifier,
            trust,
            keys,
            next_id: AtomicU64::new(0),
            spawn_latencies: Mutex::new(Vec::new()),
        }
    }

    /// Starts workers until `n` are idle (at most the capacity).
    pub fn prewarm(&self, n: usize) -> Result<(), PoolError> {
        while self.idle_count() < n.min(self.capacity) {
            let w = self.spawn()?;
            self.idle.lock().expect("pool lock").push(w);
        }
        Ok(())
    }

    /// An idle worker, or a freshly spawned one when none is idle.
    pub fn acquire(&self) -> Result<DecoderWorker, PoolError> {
        let pooled = self.idle.lock().expect("pool lock").pop();
        match pooled {
            Some(w) => Ok(w),
            None => self.spawn(),
        }
    }

    /// Rotates the worker's key and returns it to the pool. Workers beyond
    /// the capacity are shut down instead.
    pub fn release(&self, mut w: DecoderWorker) -> Result<(), PoolError> {
        if self.idle_count() >= self.capacity {
            return Ok(());
        }
        w.rotate()?;
        let mut idle = self.idle.lock().expect("pool lock");
        if idle.len() < self.capacity {
            idle.push(w);
            return Ok(());
        }
        drop(idle);
        // lost the race for the last slot; `w` shuts down here
        Ok(())
    }

    pub fn idle_count(&self) -> usize {
        self.idle.lock().expect("pool lock").len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Time each spawn took, from thread start to a certified key.
    pub fn spawn_latencies(&self) -> Vec<Duration> {
        self.spawn_latencies.lock().expect("pool lock").clone()
    }

    fn spawn(&self) -> Result<DecoderWorker, PoolError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let t0 = Instant::now();
        let w = DecoderWorker::spawn(id, Arc::clone(&self.certifier), self.trust.clone(), self.keys)?;
        self.spawn_latencies.lock().expect("pool lock").push(t0.elapsed());
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vron_core::attest::{AttestationAuthority, ManualClock};
    use vron_core::crypto::KeyPair;
    use vron_core::stages::builtin_trust_roots;

    fn pool(cap: usize) -> DecoderPool {
        let key = KeyPair::from_seed([1; 32]);
        let trust = builtin_trust_roots(key.public_key());
        let auth = AttestationAuthority::new(key, Box::new(ManualClock::new(5)));
        DecoderPool::new(cap, Arc::new(auth), trust, KeySource::Seeded(9))
    }

    #[test]
    fn release_rotates_the_key() {
        let p = pool(2);
        let w = p.acquire().unwrap();
        let first = w.certificate().stage_public_key;
        p.release(w).unwrap();
        let w = p.acquire().unwrap();
        assert_ne!(w.certificate().stage_public_key, first);
        assert_eq!(w.certificate().role, Role::Decoder);
    }

    #[test]
    fn empty_pool_spawns_and_records_latency() {
        let p = pool(2);
        assert_eq!(p.idle_count(), 0);
        let a = p.acquire().unwrap();
        let b = p.acquire().unwrap();
        assert_ne!(a.id(), b.id());
        assert_eq!(p.spawn_latencies().len(), 2);
    }

    #[test]
    fn capacity_bounds_idle_workers() {
        let p = pool(1);
        let a = p.acquire().unwrap();
        let b = p.acquire().unwrap();
        p.release(a).unwrap();
        p.release(b).unwrap();
        assert_eq!(p.idle_count(), 1);
        p.prewarm(5).unwrap();
        assert_eq!(p.idle_count(), 1);
    }
}
