name = 'hoi_composer'
