from pytrm import settings
from pytrm.exceptions import PyTRMValidationError

METHOD_RULES = {
    'geometry': {
        'required': ('width', 'height', 'wall_x', 'door_lo', 'door_hi'),
        'positive': ('width', 'height', 'wall_x'),
        'nonnegative': ('door_lo',),
        # (smaller, larger, strict)
        'ordered': (('wall_x', 'width', True), ('door_lo', 'door_hi', True), ('door_hi', 'height', False)),
    },
    'generate_manifest': {
        'required': ('kind', 'seed'),
        'choices': {'kind': settings.MANIFEST_KINDS},
    },
    'collect': {
        'required': ('n_episodes', 'length', 'seed'),
        'positive': ('n_episodes',),
        'minimum': {'length': 2},
    },
    'sample_pairs': {
        'required': ('regime', 'n_pairs', 'bins', 'seed'),
        'choices': {'regime': settings.SAMPLER_REGIMES},
        # delta_max and source_rows are optional; unset means uncapped / all rows
        'positive': ('n_pairs', 'bins', 'delta_max', 'source_rows'),
    },
    'train': {
        'required': ('lr', 'weight_decay', 'batch_size', 'epochs', 'seed'),
        'positive': ('lr', 'batch_size', 'epochs'),
        'nonnegative': ('weight_decay',),
    },
    'fit_probe': {
        'required': ('n_rows', 'ridge', 'seed'),
        'positive': ('n_rows', 'ridge'),
    },
    'terminal_cost': {
        'required': ('kind',),
        'choices': {'kind': settings.COST_KINDS},
        'nonnegative': ('lam',),
        'positive': ('eps',),
    },
    'cem_plan': {
        'required': ('n_samples', 'n_iters', 'top_k', 'horizon', 'init_std', 'min_std', 'replan_block', 'seed'),
        'positive': ('n_samples', 'n_iters', 'top_k', 'horizon', 'init_std', 'min_std', 'replan_block'),
        'ordered': (('top_k', 'n_samples', False), ('replan_block', 'horizon', False)),
    },
    'run_episode': {
        'required': ('budget',),
        'nonnegative': ('budget',),
    },
}


def check_exists_in_dictionary(method, dictionary, required_fields, label=None):
    """Checks if required fields have a value in the dictionary.
    Throws an exception with the missing fields.

    :param string method: Method being validated.
    :param dict dictionary: Dictionary to check.
    :param tuple required_fields: Required fields that must have a value.
    :param string label: Dictionary name.
    """
    missing = []
    for field in required_fields:
        if field not in dictionary or dictionary[field] is None:
            missing.append(field)
    if missing:
        error_label = ' for "%s"' % label if label else ''
        raise PyTRMValidationError('Method: %s. Missing required field(s)%s: %s' % (method, error_label, missing),
                                   method,
                                   missing
                                   )


def check_choices(method, dictionary, choices):
    """Checks that enumerated fields hold one of their allowed values.

    :param string method: Method being validated.
    :param dict dictionary: Dictionary to check.
    :param dict choices: Field name -> tuple of allowed values.
    """
    invalid = []
    values = []
    for field, allowed in choices.items():
        if field in dictionary and dictionary[field] is not None and dictionary[field] not in allowed:
            invalid.append(field)
            values.append(dictionary[field])
    if invalid:
        raise PyTRMValidationError('Method: %s. Unknown value(s) for field(s) %s: %s' % (method, invalid, values),
                                   method,
                                   invalid,
                                   values
                                   )


def check_bounds(method, dictionary, fields, lower, strict):
    """Checks numeric fields against a lower bound, skipping unset fields.

    :param string method: Method being validated.
    :param dict dictionary: Dictionary to check.
    :param tuple fields: Fields to check.
    :param float lower: Lower bound.
    :param bool strict: Whether the bound is exclusive.
    """
    invalid = []
    values = []
    for field in fields:
        value = dictionary.get(field)
        if value is None:
            continue
        if (strict and not value > lower) or (not strict and not value >= lower):
            invalid.append(field)
            values.append(value)
    if invalid:
        relation = '>' if strict else '>='
        raise PyTRMValidationError('Method: %s. Field(s) %s must be %s %s: %s' % (method, invalid, relation, lower, values),
                                   method,
                                   invalid,
                                   values
                                   )


def check_ordered(method, dictionary, pairs):
    """Checks (smaller, larger, strict) field pairs.

    :param string method: Method being validated.
    :param dict dictionary: Dictionary to check.
    :param tuple pairs: Tuple of (smaller_field, larger_field, strict).
    """
    for smaller, larger, strict in pairs:
        a = dictionary.get(smaller)
        b = dictionary.get(larger)
        if a is None or b is None:
            continue
        if (strict and not a < b) or (not strict and not a <= b):
            relation = '<' if strict else '<='
            raise PyTRMValidationError('Method: %s. Expected %s %s %s: %s, %s' % (method, smaller, relation, larger, a, b),
                                       method,
                                       [smaller, larger],
                                       [a, b]
                                       )


def validate(method, values):
    """Validate a configuration dictionary based on the METHOD_RULES above.

    Raises a PyTRMValidationError on error.

    :param string method: Method being validated.
    :param dict values: Field values (dataclass configs pass ``asdict``).
    """
    if method not in METHOD_RULES:
        raise PyTRMValidationError('Method "%s" not found.' % method, method)

    m = METHOD_RULES[method]
    if 'required' in m:
        check_exists_in_dictionary(method, values, m['required'])
    if 'choices' in m:
        check_choices(method, values, m['choices'])
    if 'positive' in m:
        check_bounds(method, values, m['positive'], 0, True)
    if 'nonnegative' in m:
        check_bounds(method, values, m['nonnegative'], 0, False)
    if 'minimum' in m:
        for field, lower in m['minimum'].items():
            check_bounds(method, values, (field,), lower, False)
    if 'ordered' in m:
        check_ordered(method, values, m['ordered'])
