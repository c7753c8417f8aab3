"""toxlens: small molecular classifiers with substructure-level explanations.

Parse SMILES into molecular graphs, fingerprint them with provenance-aware
circular environments, train dense or graph-convolution classifiers with
exact gradients, and explain the models three ways: per-atom attributions
by integrated gradients, hidden-unit/pattern association screening, and
indicative-substructure mining from graph convolutions.
"""

__version__ = "0.1.0"

from .chem import (
    Atom,
    Bond,
    MolecularGraph,
    ParseError,
    graphs_isomorphic,
    induced_subgraph,
    parse_smiles,
    permute_atoms,
    write_smiles,
)
from .patterns import Pattern, match_pattern, parse_pattern, pattern_from_graph
from .fingerprint import Fingerprint, FingerprintConfig, atoms_for_bits, ecfp, \
    feature_matrix
from .densenet import DenseNet, TrainConfig, auc, preset_config, train
from .attribution import (
    AttributionResult,
    atomwise,
    attribute_molecule,
    integrated_gradients,
    render_attribution,
)
from .gcn import (
    AtomFeaturizer,
    GCNTrainConfig,
    GraphConvNet,
    SubstructureScore,
    conv_layer,
    extract_top_substructures,
    forward_molecule,
    gcn_preset_config,
    score_substructures,
    train_gcn,
)
from .unitscreen import ScreeningReport, mann_whitney_u, presence_calls, screen
from .datasets import (
    GeneratorConfig,
    LabeledSet,
    generate_alcohol_set,
    generate_planted_set,
    load_table,
    save_table,
    split,
)
from .modelio import load_model, save_model
