import os
import sys
import time
import asyncio
import logging
import argparse
import importlib
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Dict, List, Tuple

import colorlog
from dotenv import load_dotenv

from helpers.field_classes import WorkbenchError
from helpers.field_io import versions, write_manifest
from helpers.run_config import RunContext, load_config

# --- LOGGING SETUP ---
# INFO by default; WORKBENCH_LOG_LEVEL or --log-level override it
log_level = logging.INFO

# 1. Create the ColoredFormatter
log_format = (
    '%(asctime)s '
    '%(log_color)s[%(levelname)-8s] '
    '%(name)-15s: '
    '%(reset)s\n%(message)s'
)

# This maps log levels to specific colors (for %(log_color)s)
log_colors_config = {
    'DEBUG': 'cyan',
    'INFO': 'blue',
    'WARNING': 'yellow',
    'ERROR': 'red',
    'CRITICAL': 'bold_red',
}

# This maps logger names to colors (for 'name')
name_colors_config = {
    'helpers': 'purple',
    'cogs': 'blue',
    '': 'yellow',  # Root/main logger
}

# This maps the message itself to colors (for 'message')
message_colors_config = {
    'WARNING': 'yellow',
    'ERROR': 'red',
    'CRITICAL': 'bold_red',
}

formatter = colorlog.ColoredFormatter(
    log_format,
    datefmt='%Y-%m-%d %H:%M:%S',
    log_colors=log_colors_config,
    secondary_log_colors={
        'name': name_colors_config,
        'message': message_colors_config
    },
    style='%'
)

# 2. Get the root logger
logger = logging.getLogger()
logger.setLevel(log_level)

# 3. Create the handler and set the formatter
stdout_handler = logging.StreamHandler(sys.stdout)
stdout_handler.setFormatter(formatter)

# 4. Remove any old handlers and add the new one
logger.handlers = []
logger.addHandler(stdout_handler)

# --- END OF LOGGING SETUP ---

# Keep a single, easy-to-access logger for this file
log = logging.getLogger(__name__)

# --- Load Environment ---
load_dotenv()
COMMANDS_CSV = os.getenv("WORKBENCH_COMMANDS", "cogs/cogs.csv")
ENV_LOG_LEVEL = os.getenv("WORKBENCH_LOG_LEVEL")

CommandCallback = Callable[[RunContext], Awaitable[dict]]


@dataclass
class Command:
    name: str
    callback: CommandCallback
    help: str
    arguments: List[Tuple[tuple, dict]] = field(default_factory=list)


class Workbench:
    def __init__(self):
        self.commands: Dict[str, Command] = {}
        self.extensions: List[str] = []

    def add_command(self, name: str, callback: CommandCallback, help: str, arguments=None):
        if name in self.commands:
            raise WorkbenchError(f"command '{name}' is registered twice")
        self.commands[name] = Command(name, callback, help, list(arguments or []))

    async def load_extension(self, path: str):
        module = importlib.import_module(path)
        if not hasattr(module, "setup"):
            raise WorkbenchError(f"{path} has no setup function")
        await module.setup(self)
        self.extensions.append(path)

    async def load_commands(self, csv_path: str = COMMANDS_CSV):
        """Import every command module named in the CSV (a single comma separated line)."""
        log.info("Loading command modules...")
        try:
            with open(csv_path, mode='r') as f:
                modules_to_load = f.readline().strip().split(',')

            for module_file in modules_to_load:
                module_file = module_file.strip()
                if module_file:
                    module_path = f"cogs.{module_file.replace('.py', '')}"
                    try:
                        await self.load_extension(module_path)
                        print(f"✅ Loaded command module: {module_path}")
                    except Exception as e:
                        print(f"❌ Failed to load command module {module_path}: {e}")
                        log.error("❌ Failed to load command module " + module_path + ": %s", e, exc_info=True)

        except FileNotFoundError:
            log.warning(f"⚠️ {csv_path} not found. No commands were loaded.")

        print("--- Finished loading command modules ---")

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="Workbench", description="Numerical workbench for metric recovery "
                                                                       "from partial Dirichlet-to-Neumann data.")
        parser.add_argument("--config", help="TOML experiment configuration (default data/default_config.toml)")
        parser.add_argument("--out", help="output directory (default $WORKBENCH_OUT or ./runs)")
        parser.add_argument("--seed", type=int, help="random seed (non-negative integer)")
        parser.add_argument("--threads", type=int, help="worker threads (default $WORKBENCH_THREADS or 1)")
        parser.add_argument("--log-level", default=ENV_LOG_LEVEL or "INFO",
                            choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
        sub = parser.add_subparsers(dest="command", metavar="command")
        sub.required = True
        for cmd in self.commands.values():
            p = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help)
            for flags, kwargs in cmd.arguments:
                p.add_argument(*flags, **kwargs)
        return parser

    async def run(self, argv=None) -> int:
        parser = self.build_parser()
        args = parser.parse_args(argv)
        logging.getLogger().setLevel(args.log_level)

        manifest = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                    "versions": versions(), "status": "error"}
        start = time.perf_counter()
        try:
            cfg = load_config(args.config, out_dir=args.out, seed=args.seed, threads=args.threads)
        except WorkbenchError as e:
            log.error(f"Configuration error: {e}", exc_info=True)
            return 2

        ctx = RunContext(cfg, args.command, args)
        manifest.update({"config_hash": cfg.config_hash, "seed": cfg.seed, "config": cfg.experiment_dict()})
        command = self.commands[args.command]
        log.info(f"COMMAND: {command.name}\n  - config hash {cfg.config_hash[:12]}\n  - output {ctx.out_dir}")
        code = 0
        try:
            report = await command.callback(ctx)
            manifest["report"] = report
            manifest["status"] = "ok"
        except WorkbenchError as e:
            log.error(f"COMMAND ERROR: {command.name}:\n  - {type(e).__name__}: {e}", exc_info=True)
            manifest["error"] = f"{type(e).__name__}: {e}"
            code = 1
        finally:
            ctx.timer.timings["total"] = time.perf_counter() - start
            manifest["timings"] = ctx.timer.timings
            path = write_manifest(ctx.out_dir, manifest)
            log.info(f"Run manifest written to {path}")
        return code


async def main(argv=None) -> int:
    bench = Workbench()
    await bench.load_commands()
    return await bench.run(argv)


# --- Run the Workbench ---
if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
