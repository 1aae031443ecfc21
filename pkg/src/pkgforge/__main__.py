from .cli import console_entrypoint

console_entrypoint()
