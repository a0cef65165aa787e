from .cohort import (Cohort, CohortSampler, HazardModel, gen_cohort, load_cohort, load_subject,
                     read_manifest, subject_seeds, write_cohort)
from .phantom import (Ellipsoid, PhantomSpec, PhantomSpecError, SubjectSample, Tube, gen_phantom)
from .volio import HEADER_SIZE, VolumeFormatError, decode_volume, encode_volume, read_volume, write_volume
