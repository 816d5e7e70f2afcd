# Scene layout planning and conditioning package
