//! In-process rank communicator: each rank is a worker thread with one
//! inbound mailbox. Messages from a fixed sender arrive in send order;
//! collectives are built from point-to-point sends processed in rank order.

use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::error::{Error, Result};

const TAG_ABORT: u32 = u32::MAX;

pub mod tags {
    pub const GHOST: u32 = 1;
    pub const GHOST_REFRESH: u32 = 2;
    pub const MIGRATE: u32 = 3;
    pub const CONTACTS: u32 = 4;
    pub const HALO: u32 = 5;
    pub const DEPOSIT: u32 = 6;
    pub const GATHER: u32 = 7;
    pub const REDUCE: u32 = 8;
}

struct Packet {
    src: usize,
    tag: u32,
    data: Vec<u8>,
}

pub struct Comm {
    rank: usize,
    size: usize,
    senders: Vec<Sender<Packet>>,
    rx: Option<Receiver<Packet>>,
    stash: Vec<VecDeque<Packet>>,
}

impl Comm {
    /// A single-rank communicator; collectives are identities.
    pub fn solo() -> Comm {
        Comm { rank: 0, size: 1, senders: Vec::new(), rx: None, stash: vec![VecDeque::new()] }
    }

    /// Creates a connected group of `n` communicators, one per rank.
    pub fn group(n: usize) -> Vec<Comm> {
        assert!(n >= 1);
        if n == 1 {
            return vec![Comm::solo()];
        }
        let (txs, rxs): (Vec<_>, Vec<_>) = (0..n).map(|_| channel::<Packet>()).unzip();
        rxs.into_iter()
            .enumerate()
            .map(|(rank, rx)| Comm {
                rank,
                size: n,
                senders: txs.clone(),
                rx: Some(rx),
                stash: (0..n).map(|_| VecDeque::new()).collect(),
            })
            .collect()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn send(&self, dst: usize, tag: u32, data: Vec<u8>) -> Result<()> {
        assert_ne!(dst, self.rank, "self-send");
        self.senders[dst]
            .send(Packet { src: self.rank, tag, data })
            .map_err(|_| Error::Protocol { from: self.rank, to: dst, msg: "receiver hung up".into() })
    }

    pub fn recv(&mut self, src: usize, tag: u32) -> Result<Vec<u8>> {
        assert_ne!(src, self.rank, "self-receive");
        if let Some(p) = self.stash[src].pop_front() {
            return self.check(p, src, tag);
        }
        let rx = self.rx.as_ref().expect("single-rank communicator has no peers");
        loop {
            let p = rx
                .recv()
                .map_err(|_| Error::Protocol { from: src, to: self.rank, msg: "sender hung up".into() })?;
            if p.tag == TAG_ABORT {
                return Err(Error::PeerAbort(p.src));
            }
            if p.src == src {
                return self.check(p, src, tag);
            }
            self.stash[p.src].push_back(p);
        }
    }

    fn check(&self, p: Packet, src: usize, tag: u32) -> Result<Vec<u8>> {
        if p.tag == TAG_ABORT {
            return Err(Error::PeerAbort(src));
        }
        if p.tag != tag {
            return Err(Error::Protocol {
                from: src,
                to: self.rank,
                msg: format!("expected message tag {tag}, got {}", p.tag),
            });
        }
        Ok(p.data)
    }

    /// Tells every peer this rank is gone; their pending receives fail.
    pub fn abort(&self) {
        for dst in 0..self.size {
            if dst != self.rank {
                let _ = self.senders[dst].send(Packet { src: self.rank, tag: TAG_ABORT, data: Vec::new() });
            }
        }
    }

    /// Every rank contributes one buffer; every rank receives all of them,
    /// indexed by rank.
    pub fn allgather(&mut self, tag: u32, data: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        if self.size == 1 {
            return Ok(vec![data]);
        }
        for dst in 0..self.size {
            if dst != self.rank {
                self.send(dst, tag, data.clone())?;
            }
        }
        let mut out = Vec::with_capacity(self.size);
        let mut own = Some(data);
        for src in 0..self.size {
            if src == self.rank {
                out.push(own.take().unwrap());
            } else {
                out.push(self.recv(src, tag)?);
            }
        }
        Ok(out)
    }

    /// Sends `outgoing[r]` to each other rank `r` and returns what each
    /// rank sent here (own slot holds `outgoing[self]`).
    pub fn alltoall(&mut self, tag: u32, mut outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        assert_eq!(outgoing.len(), self.size);
        let own = std::mem::take(&mut outgoing[self.rank]);
        for (dst, buf) in outgoing.into_iter().enumerate() {
            if dst != self.rank {
                self.send(dst, tag, buf)?;
            }
        }
        let mut incoming = Vec::with_capacity(self.size);
        let mut own = Some(own);
        for src in 0..self.size {
            if src == self.rank {
                incoming.push(own.take().unwrap());
            } else {
                incoming.push(self.recv(src, tag)?);
            }
        }
        Ok(incoming)
    }

    pub fn all_max(&mut self, x: f64) -> Result<f64> {
        let all = self.allgather(tags::REDUCE, x.to_le_bytes().to_vec())?;
        Ok(all.iter().map(|b| f64_at(b, 0)).fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn all_or(&mut self, b: bool) -> Result<bool> {
        let all = self.allgather(tags::REDUCE, vec![u8::from(b)])?;
        Ok(all.iter().any(|v| v[0] != 0))
    }

    pub fn all_sum_u64(&mut self, x: u64) -> Result<u64> {
        let all = self.allgather(tags::REDUCE, x.to_le_bytes().to_vec())?;
        Ok(all.iter().map(|b| u64::from_le_bytes(b[..8].try_into().unwrap())).sum())
    }

    pub fn barrier(&mut self) -> Result<()> {
        self.allgather(tags::REDUCE, Vec::new()).map(|_| ())
    }

    /// Sums per-box partial values in ascending box order, so the result
    /// does not depend on which rank owns which box.
    pub fn box_ordered_sums<const N: usize>(&mut self, parts: &[(usize, [f64; N])]) -> Result<[f64; N]> {
        let mut buf = Vec::with_capacity(parts.len() * (8 + 8 * N));
        for (b, vals) in parts {
            buf.extend_from_slice(&(*b as u64).to_le_bytes());
            for v in vals {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let all = self.allgather(tags::REDUCE, buf)?;
        let mut entries: Vec<(u64, [f64; N])> = Vec::new();
        for b in &all {
            let rec = 8 + 8 * N;
            for chunk in b.chunks_exact(rec) {
                let id = u64::from_le_bytes(chunk[..8].try_into().unwrap());
                let mut vals = [0.0; N];
                for (n, v) in vals.iter_mut().enumerate() {
                    *v = f64_at(chunk, 8 + 8 * n);
                }
                entries.push((id, vals));
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut total = [0.0; N];
        for (_, vals) in entries {
            for n in 0..N {
                total[n] += vals[n];
            }
        }
        Ok(total)
    }

    pub fn box_ordered_sum(&mut self, parts: &[(usize, f64)]) -> Result<f64> {
        let p: Vec<(usize, [f64; 1])> = parts.iter().map(|&(b, v)| (b, [v])).collect();
        Ok(self.box_ordered_sums(&p)?[0])
    }
}

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

/// Runs `body` on `n` in-process ranks and returns each rank's result in
/// rank order. A failing rank aborts its peers; the first root-cause error
/// (not a peer abort) is returned.
pub fn run_ranks<T, F>(n: usize, body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Comm) -> Result<T> + Sync,
{
    if n == 1 {
        let mut c = Comm::solo();
        return Ok(vec![body(&mut c)?]);
    }
    let comms = Comm::group(n);
    let results: Vec<Result<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|mut comm| {
                let body = &body;
                s.spawn(move || {
                    let r = body(&mut comm);
                    if r.is_err() {
                        comm.abort();
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::numerical("rank thread panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    let mut first_err: Option<Error> = None;
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                let replace = match (&first_err, e.root()) {
                    (None, _) => true,
                    (Some(prev), root) => matches!(prev.root(), Error::PeerAbort(_)) && !matches!(root, Error::PeerAbort(_)),
                };
                if replace {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
