# Copyright 2026 Xanadu Quantum Technologies Inc.

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Top level advprop module"""
from advprop._version import __version__

from advprop.advtrain import AdvTrainConfig, adversarial_train
from advprop.attack_model import AttackVector, CostModel, DatasetStatistics
from advprop.config import ExperimentConfig, load_config
from advprop.evaluation import EvalReport, evaluate, pauc_at_fpr
from advprop.feature_engine import EnrichedDataset, FeaturePlan, compute_features, default_plan
from advprop.learner import GbdtModel, TrainParams, fit
from advprop.propagation import EstimatorAssignment, Estimators, propagate, train_estimators
from advprop.search import SearchConfig, Strategy, attack_rows
from advprop.synthdata import GeneratorConfig, Transaction, generate
from advprop.utils import ConfigurationError
