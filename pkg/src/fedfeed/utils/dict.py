"""Module containing the DictDefault class"""

from addict import Dict


class DictDefault(Dict):
    """
    A Dict that returns None instead of returning empty Dict for missing keys.
    """

    def __missing__(self, key):
        return None

    def __or__(self, other):
        return DictDefault(super().__or__(other))

    def to_plain(self) -> dict:
        """Nested builtin dict, sorted by key, suitable for json.dump"""
        return {key: _plain(self[key]) for key in sorted(self.keys())}


def _plain(value):
    if isinstance(value, Dict):
        return {key: _plain(value[key]) for key in sorted(value.keys())}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value
