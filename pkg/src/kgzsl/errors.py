"""Exception hierarchy.

Every error raised by the pipeline derives from :class:`KgzslError`. The three
intermediate classes map onto CLI exit codes (config 1, data 2, numeric 3).
"""


class KgzslError(Exception):
    exit_code = 2


class ConfigError(KgzslError):
    exit_code = 1


class DataError(KgzslError):
    exit_code = 2


class NumericError(KgzslError):
    exit_code = 3


# ingest
class EmptyConcept(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no, line, reason="malformed"):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {reason}: {line!r}")


class NegativeWeight(MalformedLine):
    def __init__(self, line_no, line):
        super().__init__(line_no, line, reason="negative weight")


class CycleDetected(DataError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("taxonomy cycle: " + " -> ".join(self.cycle))


# graph building
class UnknownConcept(DataError):
    pass


class NoCommonSubsumer(DataError):
    pass


class EmptySeedSet(DataError):
    pass


class UnresolvableSeed(DataError):
    def __init__(self, seeds):
        self.seeds = list(seeds)
        super().__init__("unresolvable seeds: " + ", ".join(self.seeds))


class SeedConflict(DataError):
    pass


class UnknownMappingTarget(DataError):
    pass


# numerics
class ShapeMismatch(NumericError):
    pass


class NonFiniteInput(NumericError):
    pass


class UntrackedParameter(NumericError):
    pass


# training
class TooFewAnchors(DataError):
    pass


class AnchorNotInGraph(DataError):
    pass


class DivergedLoss(NumericError):
    pass


class MissingMappingTarget(DataError):
    pass


# classifier head
class MissingClassEmbedding(DataError):
    pass


class DimMismatch(DataError):
    pass


class EmptyTrainSplit(DataError):
    pass


class UnseenLabelInTrain(DataError):
    pass


# evaluation
class EmptyGroup(DataError):
    pass


class DegeneratePartition(DataError):
    pass
