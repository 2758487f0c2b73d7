from owapool.harness.cifar import CifarFormatError, load_cifar10, parse_records
from owapool.harness.config import ConfigError, ExperimentConfig, load_config
from owapool.harness.experiments import (Report, benchmark_pooling, count_windows, rotate_images,
                                         rotation_robustness, run_bench_experiment,
                                         run_bow_experiment, run_cnn_experiment,
                                         run_robustness_experiment)
from owapool.harness.synth import SynthSpec, separable_codes, spurious_codes, synth_dataset
