"""Collects ``--help`` output of the top-level parser and every subcommand."""

from vrpseg.cli import build_parser

COMMANDS = ("synth", "reference-config", "simulate-prompts", "train", "eval", "compare-gp", "ablate", "info")


def all_help() -> str:
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    parts = [parser.format_help()]
    for name in COMMANDS:
        parts.append(f"==== {name} ====\n" + sub.choices[name].format_help())
    return "\n".join(parts)


if __name__ == "__main__":
    import sys

    sys.stdout.write(all_help())
