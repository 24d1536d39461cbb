"""Task replay and replication resilience for an asynchronous task runtime.

The package layers four pieces:

* :mod:`resilitask.engine` - worker pool, futures, dataflow join.
* :mod:`resilitask.combinators` - local replay/replicate combinators and a
  resilient executor wrapper.
* :mod:`resilitask.cluster` / :mod:`resilitask.distributed` - simulated
  localities with serialized action calls and channels, plus distributed
  replay/replicate driven from the calling locality.
* :mod:`resilitask.faults`, :mod:`resilitask.stencil`,
  :mod:`resilitask.bench`, :mod:`resilitask.cli` - deterministic fault
  injection, the 1D advection workload, and the benchmark harness.
"""

from .engine import (PoolConfig, TaskFuture, WorkerPool, busy_wait_us,
                     current_attempt, current_locality, dataflow, failed,
                     ready, wait_all)
from .combinators import (ResilienceError, ResilienceMetrics, ResilientExecutor,
                          async_replay, async_replay_validate, async_replicate,
                          async_replicate_validate, async_replicate_vote,
                          async_replicate_vote_validate, dataflow_replay,
                          dataflow_replay_validate, dataflow_replicate,
                          dataflow_replicate_validate, dataflow_replicate_vote,
                          dataflow_replicate_vote_validate, majority_vote,
                          make_resilient_executor, replay_call)
from .faults import (CORRUPT, THROW, FaultContext, FaultSpec, SimulatedCorruption,
                     effective_rate, flip_detectable_bit, flip_mantissa_bit,
                     inject, sample_failure)
from .cluster import (Channel, ChannelClosed, CodecError, Envelope, LocalitySim,
                      NetConfig, RemoteError, UnknownActionError, decode_envelope,
                      decode_value, encode_request, encode_value, spawn_localities)
from .distributed import (DistributedMetrics, distributed_replay,
                          distributed_replay_validate, distributed_replicate,
                          distributed_replicate_validate, distributed_replicate_vote,
                          distributed_replicate_vote_validate, make_backup_lists)
from .stencil import (StencilConfig, StencilRunResult, Subdomain, analytic_solution,
                      checksum_valid, checksum_weights, dump_grid, lax_wendroff_steps,
                      load_grid, make_initial_grid, run_stencil_distributed,
                      run_stencil_local, subdomain_task)
from .bench import (RunReport, read_csv, run_synthetic_distributed,
                    run_synthetic_local, stencil_report, write_csv, write_ratio_file)

__version__ = "0.1.0"
