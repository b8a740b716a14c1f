//! Ghost particles: read-only copies of owned particles lying within one
//! cell of a box owned by another rank.

use std::ops::Range;

use super::boxes::BoxDecomposition;
use super::comm::{tags, Comm};
use super::wire::{decode_particles, encode_particles};
use crate::config::ParticleProps;
use crate::error::{Error, Result};
use crate::particles::{ParticleRecord, ParticleStore};

/// Who receives which owned particle, and where incoming ghosts live.
/// Valid until the owned segment is reordered.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GhostPlan {
    /// Owned local indices sent to each rank, ascending by id.
    pub sends: Vec<Vec<usize>>,
    /// Ghost slots filled by each source rank.
    pub recv: Vec<(usize, Range<usize>)>,
}

impl GhostPlan {
    pub fn n_sent(&self) -> usize {
        self.sends.iter().map(Vec::len).sum()
    }
}

/// Discards existing ghosts and rebuilds the ghost segment from the
/// geometric criterion. Incoming batches are appended by sender rank, each
/// sorted by id.
pub fn exchange_ghosts(
    store: &mut ParticleStore,
    decomp: &BoxDecomposition,
    comm: &mut Comm,
    props: &ParticleProps,
) -> Result<GhostPlan> {
    store.clear_ghosts();
    let size = comm.size();
    let rank = comm.rank();
    let mut sends: Vec<Vec<usize>> = vec![Vec::new(); size];
    if size == 1 {
        return Ok(GhostPlan { sends, recv: Vec::new() });
    }
    let mut targets = Vec::with_capacity(8);
    for i in 0..store.n_owned {
        decomp.ranks_near_cell(decomp.cell_of(store.pos[i]), rank, &mut targets);
        for &r in &targets {
            sends[r].push(i);
        }
    }
    for list in &mut sends {
        list.sort_by_key(|&i| store.id[i]);
    }
    let outgoing = sends
        .iter()
        .map(|list| encode_particles(&list.iter().map(|&i| store.record(i)).collect::<Vec<_>>()))
        .collect();
    let incoming = comm.alltoall(tags::GHOST, outgoing)?;
    let mut recv = Vec::new();
    for (src, bytes) in incoming.iter().enumerate() {
        if src == rank {
            continue;
        }
        let recs = decode_particles(bytes, src, rank)?;
        let start = store.len();
        for rec in &recs {
            store.push_ghost(rec, props);
        }
        recv.push((src, start..store.len()));
    }
    Ok(GhostPlan { sends, recv })
}

/// Overwrites the ghost segment with the current state of the same ghost
/// set (no membership change).
pub fn refresh_ghosts(store: &mut ParticleStore, plan: &GhostPlan, comm: &mut Comm) -> Result<()> {
    let size = comm.size();
    if size == 1 {
        return Ok(());
    }
    let rank = comm.rank();
    let outgoing = plan
        .sends
        .iter()
        .map(|list| encode_particles(&list.iter().map(|&i| store.record(i)).collect::<Vec<ParticleRecord>>()))
        .collect();
    let incoming = comm.alltoall(tags::GHOST_REFRESH, outgoing)?;
    for (src, range) in &plan.recv {
        let recs = decode_particles(&incoming[*src], *src, rank)?;
        if recs.len() != range.len() {
            return Err(Error::Protocol {
                from: *src,
                to: rank,
                msg: format!("ghost refresh carried {} particles, expected {}", recs.len(), range.len()),
            });
        }
        for (slot, rec) in range.clone().zip(&recs) {
            if store.id[slot] != rec.id {
                return Err(Error::Protocol { from: *src, to: rank, msg: format!("ghost refresh id mismatch ({} vs {})", store.id[slot], rec.id) });
            }
            store.set_state(slot, rec);
        }
    }
    Ok(())
}
