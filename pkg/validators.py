import math
from numbers import Real
from typing import Iterable


class Invalid(Exception):
    pass


def _is_number(value):
    return isinstance(value, Real) and not isinstance(value, bool)


def mandatory():
    def validate(value, **_kwargs):
        if value is None:
            raise Invalid('Missing mandatory value')

    return validate


def non_empty(description='value'):
    def validate(value, **_kwargs):
        if value is None or len(value) == 0:
            raise Invalid(f'empty {description}')

    return validate


def in_set(valid_value_set: set):
    def validate(value, **_kwargs):
        if value not in valid_value_set:
            raise Invalid(f'Value "{value}" is not in the valid set')

    return validate


def set_equal(expected_set):
    def validate(value: Iterable, **_kwargs) -> None:
        value_as_set = set(value)
        if value_as_set != expected_set:
            raise Invalid((f"Values don't match expected set, "
                           f'missing values: {expected_set.difference(value_as_set)}, '
                           f'unexpected values: {value_as_set.difference(expected_set)}'))

    return validate


def finite_number():
    def validate(value, **_kwargs):
        if not _is_number(value) or not math.isfinite(value):
            raise Invalid(f'Value "{value}" is not a finite number')

    return validate


def positive():
    def validate(value, **_kwargs):
        if not _is_number(value) or not value > 0:
            raise Invalid(f'Value "{value}" must be positive')

    return validate


def non_negative():
    def validate(value, **_kwargs):
        if not _is_number(value) or value < 0:
            raise Invalid(f'Value "{value}" must be non-negative')

    return validate


def integer():
    def validate(value, **_kwargs):
        if not isinstance(value, int) or isinstance(value, bool):
            raise Invalid(f'Value "{value}" is not an integer')

    return validate


def finite_vector(length: int):
    def validate(value, **_kwargs):
        if not isinstance(value, list) or len(value) != length:
            raise Invalid(f'Expected a list of {length} numbers, got "{value}"')
        if not all(_is_number(component) and math.isfinite(component) for component in value):
            raise Invalid(f'Vector "{value}" has non-finite components')

    return validate


def vector_list(length: int, count=None):
    check_vector = finite_vector(length)

    def validate(value, **kwargs):
        if not isinstance(value, list):
            raise Invalid(f'Expected a list of {length}-vectors')
        if count is not None and len(value) != count:
            raise Invalid(f'Expected {count} entries, got {len(value)}')
        for vector in value:
            check_vector(vector, **kwargs)

    return validate


def unit_quaternion(tolerance: float = 1e-6):
    check_vector = finite_vector(4)

    def validate(value, **kwargs):
        check_vector(value, **kwargs)
        norm = math.sqrt(sum(component * component for component in value))
        if not 1 - tolerance <= norm <= 1 + tolerance:
            raise Invalid(f'Quaternion norm {norm} is outside 1 ± {tolerance}')

    return validate


def boolean_flags(count: int):
    def validate(value, **_kwargs):
        if not isinstance(value, list) or len(value) != count or not all(isinstance(flag, bool) for flag in value):
            raise Invalid(f'Expected {count} boolean flags, got "{value}"')

    return validate


def ordered_range():
    def validate(value, **_kwargs):
        if not isinstance(value, list) or len(value) != 2 or not all(_is_number(bound) for bound in value):
            raise Invalid(f'Expected a [min, max] pair, got "{value}"')
        if value[0] > value[1]:
            raise Invalid(f'Range minimum {value[0]} exceeds maximum {value[1]}')

    return validate


def parent_precedes_child():
    def validate(parent, **kwargs):
        index = kwargs['index']
        if parent is None:
            return
        if not isinstance(parent, int) or isinstance(parent, bool) or not 0 <= parent < index:
            raise Invalid(f'Joint {index} has parent "{parent}", parents must precede their children')

    return validate
