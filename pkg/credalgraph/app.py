from argparse import ArgumentParser, Namespace
from sys import stderr
from typing import Optional, Sequence
import os
import logging

from .config import RunConfig
from .constants import Constants
from .errors import ConfigError
from .graph import DatasetSplitSpec, edge_homophily, generate_csbm, leave_out_class_split, save_dataset
from .harness import build_dataset, build_partition, emit_results, run_ood_experiment
from .training import grid_search, save_checkpoint, train_model
from .verification import run_verification


class App:
    def __init__(self):
        self.logger = logging.getLogger("credalgraph")
        self.handler = logging.StreamHandler(stderr)
        self.logger.addHandler(self.handler)
        self.logger.setLevel(logging.INFO)

    def run(self, argv: Optional[Sequence[str]] = None, do_catch_fatal: bool = True) -> int:
        """
        Returns the process exit code: 0 on success, 1 on a runtime failure, 2 on an invalid config
        """

        try:
            args = self.parser().parse_args(argv)
            if args.verbose:
                self.logger.setLevel(logging.DEBUG)

            handler = {
                "train": self.cmd_train,
                "eval-ood": self.cmd_eval_ood,
                "gen-synthetic": self.cmd_gen_synthetic,
                "verify": self.cmd_verify
            }[args.command]
            return handler(args)

        except ConfigError as ex:
            self.logger.error(f"Invalid config: {ex}")
            return 2

        except Exception:
            if do_catch_fatal:
                self.logger.critical(f"A fatal exception has occurred.", exc_info=True)
                return 1
            else:
                raise

        finally:
            self.handler.close()
            self.logger.removeHandler(self.handler)

    @staticmethod
    def parser() -> ArgumentParser:
        parser = ArgumentParser(prog="credalgraph", description="Credal graph neural networks for OOD detection.")
        subparsers = parser.add_subparsers(dest="command", required=True)

        for command in ("train", "eval-ood", "gen-synthetic"):
            subparser = subparsers.add_parser(command)
            subparser.add_argument("--config", required=True, help="path to a run config (JSON)")
            subparser.add_argument("--out", help="output directory, overriding output.dir")
            subparser.add_argument("--seed", type=int, help="single seed, overriding the config's seeds")
            subparser.add_argument("--verbose", action="store_true")
            if command == "eval-ood":
                subparser.add_argument(
                    "--jobs", type=int, default=1, help=f"parallel worker processes ({Constants.JOBS_ENV_VAR} overrides)"
                )

        verify = subparsers.add_parser("verify")
        verify.add_argument("--seed", type=int, default=0)
        verify.add_argument("--inject-fault", action="store_true", help="swap the minimum-entropy solver for the maximum")
        verify.add_argument("--verbose", action="store_true")

        return parser

    def load_config(self, args: Namespace) -> RunConfig:
        self.logger.debug(f"Attempting to load run config from {args.config}...")
        config = RunConfig.from_file(args.config, out_dir=args.out, seed=args.seed)
        self.logger.info(f"Run config successfully loaded.")

        return config

    def cmd_train(self, args: Namespace) -> int:
        config = self.load_config(args)
        dataset = build_dataset(config, logger=self.logger)
        partition = build_partition(config, dataset)
        seed = config.seeds[0]

        split = leave_out_class_split(dataset, partition, config.train_frac, config.val_frac, seed)
        train_config = config.model.train_config(dataset.feature_dim, seed)
        if config.grid:
            model, history, train_config = grid_search(dataset, split, partition, train_config, config.grid, logger=self.logger)
        else:
            model, history = train_model(
                dataset, split, partition, train_config, logger=self.logger, do_log_all=config.output.do_log_all
            )

        out_dir = config.output.dir
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out_dir / Constants.CHECKPOINT_DIR_NAME)
        history.to_csv(out_dir / Constants.HISTORY_CSV_FILE_NAME, record_timing=config.output.record_timing)
        self.logger.info(f"Checkpoint and training history written to {out_dir}")

        return 0

    def cmd_eval_ood(self, args: Namespace) -> int:
        config = self.load_config(args)

        jobs = args.jobs
        if os.environ.get(Constants.JOBS_ENV_VAR):
            try:
                jobs = int(os.environ[Constants.JOBS_ENV_VAR])
            except ValueError as ex:
                raise ConfigError(f"{Constants.JOBS_ENV_VAR} must be an integer: {os.environ[Constants.JOBS_ENV_VAR]}") from ex
        if jobs < 1:
            raise ConfigError(f"jobs must be at least 1: {jobs}")

        results = run_ood_experiment(config, jobs=jobs, logger=self.logger)
        document = emit_results(results, config.output.dir)

        for method_name, method in document["methods"].items():
            for kind, summary in method["summary"].items():
                auroc = summary["auroc"]
                if auroc["mean"] is None:
                    print(f"{method_name:<20} {kind:<7} AUROC n/a")
                    continue

                spread = "" if auroc["std"] is None else f" ± {auroc['std']:.4f}"
                print(f"{method_name:<20} {kind:<7} AUROC {auroc['mean']:.4f}{spread} (n={auroc['n']})")
        for error in document["errors"]:
            print(f"{error['method']:<20} seed {error['seed']}: {error['error']}")

        return 0

    def cmd_gen_synthetic(self, args: Namespace) -> int:
        config = self.load_config(args)
        if config.csbm is None:
            raise ConfigError("gen-synthetic requires a 'csbm' dataset section")

        dataset = generate_csbm(config.csbm)
        split_spec = None
        if config.ood_classes is not None:
            split_spec = DatasetSplitSpec(
                ood_classes=config.ood_classes, train_frac=config.train_frac, val_frac=config.val_frac,
                seed=config.seeds[0]
            )

        save_dataset(dataset, config.output.dir, split_spec=split_spec)
        homophily = f"{edge_homophily(dataset):.4f}" if dataset.num_edges else "undefined"
        self.logger.info(
            f"Synthetic dataset '{dataset.name}' written to {config.output.dir}"
            f" ({dataset.num_nodes} nodes, {dataset.num_edges} edges, edge homophily {homophily})."
        )

        return 0

    def cmd_verify(self, args: Namespace) -> int:
        results = run_verification(seed=args.seed, inject_fault=args.inject_fault, logger=self.logger)
        for result in results:
            print(result.describe())

        return 0 if all(result.passed for result in results) else 1
