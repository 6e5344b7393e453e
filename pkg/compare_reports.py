import argparse
import csv


def compare_files(old_file_path, new_file_path, ignored_columns=()):
    problems_found = []

    with open(old_file_path) as old_file:
        old_file_reader = csv.DictReader(old_file, delimiter=',')
        old_columns = old_file_reader.fieldnames or []
        old_rows = list(old_file_reader)

    with open(new_file_path) as new_file:
        new_file_reader = csv.DictReader(new_file, delimiter=',')
        new_columns = new_file_reader.fieldnames or []
        new_rows = list(new_file_reader)

    if old_columns != new_columns:
        problems_found.append(f'Columns differ: {new_columns} but expected: {old_columns}')
        return problems_found

    if len(old_rows) != len(new_rows):
        problems_found.append(f'Row count differs: {len(new_rows)} but expected: {len(old_rows)}')

    for count, (new_row, old_row) in enumerate(zip(new_rows, old_rows), 1):
        for column in new_columns:
            if column in ignored_columns:
                continue
            if new_row[column] != old_row[column]:
                problems_found.append(f'Found different data in column {column}, row {count + 1}:'
                                      f' "{new_row[column]}" '
                                      f'but expected: "{old_row[column]}"')

    return problems_found


def parse_arguments():
    parser = argparse.ArgumentParser(description='Check that a re-run produced the same result CSV')
    parser.add_argument('old_file', help='Result CSV from the original run', type=str)
    parser.add_argument('new_file', help='Result CSV from the re-run', type=str)
    parser.add_argument('--ignore', help='Comma separated columns to skip', type=str, default='')
    return parser.parse_args()


def main():
    args = parse_arguments()

    ignored_columns = [column for column in args.ignore.split(',') if column]
    problems_found = compare_files(old_file_path=args.old_file, new_file_path=args.new_file,
                                   ignored_columns=ignored_columns)
    if problems_found:
        print('\n'.join(problems_found))
        print('These results have FAILED reproduction')
        exit(1)
    else:
        print('These results have PASSED reproduction')


if __name__ == '__main__':
    main()
