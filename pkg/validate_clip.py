import argparse
import json
from collections import namedtuple

from validators import Invalid, boolean_flags, finite_number, finite_vector, in_set, integer, mandatory, non_empty, \
    parent_precedes_child, positive, set_equal, unit_quaternion, vector_list

ValidationFailure = namedtuple('ValidationFailure', ('frame_index', 'field', 'description'))

QUATERNION_TOLERANCE = 1e-6


class ClipValidator:
    DOCUMENT_FIELDS = {'version', 'fps', 'skeleton', 'frames', 'object', 'contacts', 'object_vertices'}
    SKELETON_FIELDS = {'joints', 'body_joint_count', 'hand_joint_count', 'interaction_joints', 'foot_joints',
                       'pelvis_joint'}

    def __init__(self):
        self.document_schema = {
            'version': [mandatory(), in_set({1})],
            'fps': [mandatory(), finite_number(), positive()],
            'frames': [non_empty('clip')],
            'object': [non_empty('object trajectory')],
            'contacts': [non_empty('contact mask')],
            'object_vertices': [non_empty('object vertex set'), vector_list(3)],
        }
        self.joint_schema = {
            'name': [mandatory()],
            'parent': [parent_precedes_child()],
            'offset': [finite_vector(3)],
        }

    def frame_schema(self, joint_count):
        return {
            'root_pos': [finite_vector(3)],
            'root_quat': [unit_quaternion(QUATERNION_TOLERANCE)],
            'joint_aa': [vector_list(3, count=joint_count)],
        }

    @staticmethod
    def object_schema():
        return {
            'pos': [finite_vector(3)],
            'quat': [unit_quaternion(QUATERNION_TOLERANCE)],
        }

    @staticmethod
    def _run_schema(schema, record, frame_index, field_prefix=''):
        failures = []
        if not isinstance(record, dict):
            return [ValidationFailure(frame_index, field_prefix.rstrip('.') or None, 'Expected an object')]
        for field, validators in schema.items():
            for validator in validators:
                try:
                    validator(record.get(field), record=record, index=frame_index)
                except Invalid as invalid:
                    failures.append(ValidationFailure(frame_index, f'{field_prefix}{field}', str(invalid)))
                    break
        return failures

    def find_header_validation_failures(self, document):
        if not isinstance(document, dict):
            return [ValidationFailure(None, None, 'Motion file must hold a single JSON object')]
        try:
            set_equal(self.DOCUMENT_FIELDS)(document.keys())
        except Invalid as invalid:
            return [ValidationFailure(None, None, str(invalid))]
        return self._run_schema(self.document_schema, document, None)

    def find_skeleton_validation_failures(self, skeleton):
        if not isinstance(skeleton, dict):
            return [ValidationFailure(None, 'skeleton', 'Expected an object')]
        try:
            set_equal(self.SKELETON_FIELDS)(skeleton.keys())
        except Invalid as invalid:
            return [ValidationFailure(None, 'skeleton', str(invalid))]
        failures = []
        joints = skeleton['joints']
        if not isinstance(joints, list) or not joints:
            return [ValidationFailure(None, 'skeleton.joints', 'empty joint list')]
        for index, joint in enumerate(joints):
            failures.extend(self._run_schema(self.joint_schema, joint, index, 'skeleton.joints.'))
        for field in ('body_joint_count', 'hand_joint_count', 'pelvis_joint'):
            try:
                integer()(skeleton[field])
            except Invalid as invalid:
                failures.append(ValidationFailure(None, f'skeleton.{field}', str(invalid)))
        return failures

    def find_frame_validation_failures(self, document, joint_count, hand_count):
        failures = []
        frame_schema = self.frame_schema(joint_count)
        for frame_index, frame in enumerate(document['frames']):
            failures.extend(self._run_schema(frame_schema, frame, frame_index))
        for frame_index, pose in enumerate(document['object']):
            failures.extend(self._run_schema(self.object_schema(), pose, frame_index, 'object.'))
        check_flags = boolean_flags(hand_count)
        for frame_index, flags in enumerate(document['contacts']):
            try:
                check_flags(flags)
            except Invalid as invalid:
                failures.append(ValidationFailure(frame_index, 'contacts', str(invalid)))
        lengths = {len(document['frames']), len(document['object']), len(document['contacts'])}
        if len(lengths) != 1:
            failures.append(ValidationFailure(None, 'frames', f'frames, object and contacts lengths differ: '
                                                              f'{sorted(lengths)}'))
        return sorted(failures, key=lambda failure: -1 if failure.frame_index is None else failure.frame_index)

    def find_document_validation_failures(self, document) -> list:
        failures = self.find_header_validation_failures(document)
        if failures:
            return failures
        failures = self.find_skeleton_validation_failures(document['skeleton'])
        if failures:
            return failures
        joint_count = len(document['skeleton']['joints'])
        return self.find_frame_validation_failures(document, joint_count, document['skeleton']['hand_joint_count'])

    def validate(self, clip_file_path) -> list:
        try:
            with open(clip_file_path, encoding='utf-8') as clip_file:
                document = json.load(clip_file)
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            return [ValidationFailure(frame_index=None, field=None,
                                      description=f'Unreadable motion file, requires utf-8 JSON, error: {err}')]
        return self.find_document_validation_failures(document)


def build_failure_log(failure):
    return (f'frame: {failure.frame_index}, field: {failure.field}, description: {failure.description}'
            if failure.frame_index is not None else
            f'field: {failure.field}, description: {failure.description}'
            if failure.field else
            failure.description)


def print_failures(failures, print_limit=20):
    print(f'{len(failures)} validation failure(s):')
    for failure in failures[:print_limit]:
        print(build_failure_log(failure))
    if len(failures) > print_limit:
        print(f'... {len(failures) - print_limit} more not shown')


def parse_arguments():
    parser = argparse.ArgumentParser(description='Validate a motion file against the motion-file format.')
    parser.add_argument('clip_file_path', help='path to the motion file', type=str)
    return parser.parse_args()


def main():
    args = parse_arguments()
    failures = ClipValidator().validate(args.clip_file_path)
    if failures:
        print_failures(failures)
        print(f'{args.clip_file_path} is not valid ❌')
        exit(1)
    print(f'Success! {args.clip_file_path} passed validation ✅')


if __name__ == "__main__":
    main()
