"""Weight-sharing cell search."""
from .controller import (ControllerState, genotype_log_prob, init_controller, reinforce_update,
                         sample_genotype)
from .genotype import CellGenotype, Node, SearchSpace, read_genotype, write_genotype
from .search import (SearchConfig, SupernetWeights, controller_epoch, derive_best_genotype,
                     init_supernet, run_search, supernet_forward, train_shared_epoch)
from ..optim import cosine_lr
